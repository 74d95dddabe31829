"""Run configuration: ``[section]`` headers, ``key = value`` entries and ``#`` comments.

Every key is typed by ``SCHEMA``; errors name the offending line.
"""
import re
from dataclasses import dataclass, field, replace
from itertools import count
from typing import Any, Callable, Dict, Generator, Optional, Tuple

from ._types import InvalidSpecError, KeystoneSRError, NoiseSpec
from .metrics import ALL_METHODS, HIGH_BAND, Method
from .priors import BtvConfig
from .restoration import RestorationConfig
from .solver import Norm, PriorKind, SolverConfig
from .synth import KeystoneKind, SceneSpec

IDENTIFIER_PATTERN = r'[a-zA-Z_][a-zA-Z_0-9]*'
SPACER_CHARACTER_PATTERN = r'[ \t]'
INDENTATION_PATTERN = rf'^{SPACER_CHARACTER_PATTERN}*'
LINE_END_PATTERN = rf'{SPACER_CHARACTER_PATTERN}*(?:#.*)?$'
VALUE_PATTERN = r'[^#]*?'


class ConfigError(KeystoneSRError):
    pass


def int_value(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f'Invalid integer {text!r}')


def float_value(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f'Invalid number {text!r}')


def bool_value(text: str) -> bool:
    lowered = text.lower()
    if lowered in ('true', 'yes', 'on', '1'):
        return True
    if lowered in ('false', 'no', 'off', '0'):
        return False
    raise ConfigError(f'Invalid boolean {text!r}')


def str_value(text: str) -> str:
    if not text:
        raise ConfigError('Empty value')
    return text


def floats_value(text: str) -> Tuple[float, ...]:
    return tuple(float_value(part.strip()) for part in text.split(','))


def enum_value(enum) -> Callable[[str], Any]:
    def convert(text: str):
        for member in enum:
            if member.value.lower() == text.lower():
                return member
        raise ConfigError(f'Invalid value {text!r}, expected one of {", ".join(member.value for member in enum)}')

    return convert


def methods_value(text: str) -> Tuple[Method, ...]:
    try:
        return tuple(Method.parse(part) for part in text.split(','))
    except ValueError as error:
        raise ConfigError(str(error))


SCHEMA: Dict[str, Dict[str, Callable[[str], Any]]] = {
    'scene': {
        'hr_rows': int_value, 'hr_cols': int_value, 'scale': int_value, 'n_bands': int_value,
        'phantom': str_value, 'background': float_value, 'band_gains': floats_value,
        'keystone': enum_value(KeystoneKind), 'dx_spread': float_value, 'dy_spread': float_value,
        'keystone_table': str_value, 'psf_support': int_value, 'psf_sigmas': floats_value,
        'noise_sigma': float_value, 'snr_db': float_value, 'seed': int_value,
    },
    'io': {
        'input_cube': str_value, 'keystone_table': str_value, 'truth': str_value, 'output_dir': str_value,
    },
    'restoration': {
        'enabled': bool_value, 'kernel_size': int_value, 'blind_iters': int_value, 'rl_inner_iters': int_value,
        'refine_kernel': bool_value,
        'deconv_reg': float_value, 'nlm_strength': float_value, 'nlm_patch': int_value, 'nlm_search': int_value,
        'noise_sigma': float_value, 'strict': bool_value,
    },
    'solver': {
        'lambda': float_value, 'beta0': float_value, 'alpha': float_value, 'P': int_value, 'scale': int_value,
        'max_iters': int_value, 'fidelity_norm': enum_value(Norm), 'prior': enum_value(PriorKind),
        'rate_up': float_value, 'rate_down': float_value, 'conv_tol': float_value, 'conv_patience': int_value,
        'revert_on_increase': bool_value, 'rmap_window': int_value, 'recompute_weights': bool_value,
        'psf_support': int_value, 'workers': int_value,
    },
    'fusion': {
        'smooth_support': int_value, 'detector_support': int_value, 'floor': float_value, 'strict': bool_value,
    },
    'metrics': {
        'n_bins': int_value, 'peak': float_value, 'band_low': float_value, 'band_high': float_value,
    },
    'compare': {
        'methods': methods_value,
    },
}


class Line:
    def __init__(self, section: Optional[str], *args):
        self.section = section


class EmptyLine(Line):
    Pattern = rf'{INDENTATION_PATTERN}{LINE_END_PATTERN}'


class SectionLine(Line):
    Pattern = rf'{INDENTATION_PATTERN}\[({IDENTIFIER_PATTERN})\]{LINE_END_PATTERN}'

    def __init__(self, section: Optional[str], name: str):
        if name not in SCHEMA:
            raise ConfigError(f'Unknown section [{name}]')
        super().__init__(name)


class EntryLine(Line):
    Pattern = rf'{INDENTATION_PATTERN}({IDENTIFIER_PATTERN}){SPACER_CHARACTER_PATTERN}*={SPACER_CHARACTER_PATTERN}*({VALUE_PATTERN}){LINE_END_PATTERN}'

    def __init__(self, section: Optional[str], key: str, text: str):
        super().__init__(section)
        if section is None:
            raise ConfigError(f'Entry {key} outside of any section')
        try:
            convert = SCHEMA[section][key]
        except KeyError:
            raise ConfigError(f'Unknown key {key} in [{section}]')
        self.key = key
        self.value = convert(text.strip())


def parse(lines) -> Generator[Line, None, None]:
    if isinstance(lines, str):
        lines = lines.split('\n')
    classes = [EmptyLine, SectionLine, EntryLine]
    section = None
    for line_number, line in zip(count(1), lines):
        line = line.rstrip('\r\n')
        try:
            try:
                cls, match = next(filter(lambda p: p[1], map(lambda c: (c, re.match(c.Pattern, line)), classes)))
            except StopIteration:
                raise ConfigError('Invalid syntax')
            parsed = cls(section, *match.groups())
            section = parsed.section
            yield parsed
        except ConfigError as error:
            error.message = f'Line {line_number}: {line}\n    {error.message}'
            raise error


def read_values(lines) -> Dict[str, Dict[str, Any]]:
    """Typed values per section; a key set twice in one section is an error."""
    values: Dict[str, Dict[str, Any]] = {}
    for line_number, line in zip(count(1), parse(lines)):
        if isinstance(line, SectionLine):
            values.setdefault(line.section, {})
        elif isinstance(line, EntryLine):
            entries = values.setdefault(line.section, {})
            if line.key in entries:
                raise ConfigError(f'Line {line_number}: duplicate key {line.key} in [{line.section}]')
            entries[line.key] = line.value
    return values


@dataclass(frozen=True)
class IoSettings:
    input_cube: Optional[str] = None
    keystone_table: Optional[str] = None
    truth: Optional[str] = None
    output_dir: str = 'output'


@dataclass(frozen=True)
class FusionSettings:
    smooth_support: Optional[int] = None  # solver scale when unset
    detector_support: int = 2
    floor: float = 1e-6
    strict: bool = True


@dataclass(frozen=True)
class MetricsSettings:
    n_bins: int = 64
    peak: Optional[float] = None
    band_low: float = HIGH_BAND[0]
    band_high: float = HIGH_BAND[1]


@dataclass(frozen=True)
class Config:
    scene: SceneSpec = field(default_factory=SceneSpec)
    io: IoSettings = field(default_factory=IoSettings)
    restore: bool = True
    restoration: RestorationConfig = field(default_factory=RestorationConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    solver_psf_support: int = 2
    fusion: FusionSettings = field(default_factory=FusionSettings)
    metrics: MetricsSettings = field(default_factory=MetricsSettings)
    methods: Tuple[Method, ...] = ALL_METHODS

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None,
                       skip_restore: bool = False, paper_literal: bool = False) -> 'Config':
        config = self
        if seed is not None:
            config = replace(config, scene=replace(config.scene, seed=seed))
        if output_dir is not None:
            config = replace(config, io=replace(config.io, output_dir=output_dir))
        if skip_restore:
            config = replace(config, restore=False)
        if paper_literal:
            config = replace(config, solver=replace(config.solver, revert_on_increase=False))
        return config


def _scene(values: Dict[str, Any]) -> SceneSpec:
    values = dict(values)
    if 'noise_sigma' in values:
        values['noise'] = NoiseSpec(sigma=values.pop('noise_sigma'))
    return SceneSpec(**values)


def _solver(values: Dict[str, Any]) -> Tuple[SolverConfig, int]:
    values = dict(values)
    psf_support = values.pop('psf_support', 2)
    btv = BtvConfig(**{key: values.pop(key) for key in ('P', 'alpha') if key in values})
    if 'lambda' in values:
        values['lambda_'] = values.pop('lambda')
    return SolverConfig(btv=btv, **values), psf_support


def build_config(values: Dict[str, Dict[str, Any]]) -> Config:
    """Config from typed section values; invalid combinations raise InvalidSpecError."""
    restoration = dict(values.get('restoration', {}))
    restore = restoration.pop('enabled', True)
    scene = _scene(values.get('scene', {}))
    solver_values = dict(values.get('solver', {}))
    if 'scale' not in solver_values:
        solver_values['scale'] = scene.scale
    elif 'scale' in values.get('scene', {}) and solver_values['scale'] != scene.scale:
        raise InvalidSpecError(f'[solver] scale {solver_values["scale"]} does not match [scene] scale {scene.scale}')
    solver, psf_support = _solver(solver_values)
    return Config(
        scene=scene,
        io=IoSettings(**values.get('io', {})),
        restore=restore,
        restoration=RestorationConfig(**restoration),
        solver=solver,
        solver_psf_support=psf_support,
        fusion=FusionSettings(**values.get('fusion', {})),
        metrics=MetricsSettings(**values.get('metrics', {})),
        methods=values.get('compare', {}).get('methods', ALL_METHODS),
    )


def load_config(path: Optional[str] = None) -> Config:
    if path is None:
        return Config()
    try:
        with open(path) as source:
            return build_config(read_values(source.read()))
    except FileNotFoundError:
        raise ConfigError(f'Config file {path} does not exist')
