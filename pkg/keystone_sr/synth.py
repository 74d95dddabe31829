"""Ground-truthed synthetic acquisitions: a phantom pan seen through per-band channel models.

Random numbers come from numpy's Philox-4x64 counter-based generator keyed by
``(seed, stream)``; stream 0 draws the phantom, stream 1 the noise. The sequence
is platform independent, so equal seeds give bit-identical datasets.
"""
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy import ndimage

from ._types import HyperCube, ImageGrid, InvalidSpecError, KeystoneModel, NoiseSpec, default_reference_band
from .operators import (ChannelModel, Psf, SpectralCoeffMap, compose_psfs, compute_spectral_coefficients,
                        make_gaussian_psf, make_rect_psf, register_cube)
from .raster import load_keystone_table, save_cube, save_grid, save_keystone_table

log = logging.getLogger(__name__)

PHANTOM_STREAM = 0
NOISE_STREAM = 1
LOW, HIGH = 500.0, 1500.0


def philox(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


phantom_makers: Dict[str, Callable] = {}


def phantom(name: str):
    def decorator(maker: Callable):
        assert name not in phantom_makers, 'Phantom redefinition'
        phantom_makers[name] = maker
        return maker

    return decorator


@phantom('ramp')
def _ramp(rows: int, cols: int, seed: int) -> np.ndarray:
    rr, cc = np.indices((rows, cols))
    return (rr * cols + cc).astype(np.float64)


@phantom('checker')
def _checker(rows: int, cols: int, seed: int, period: int = 2) -> np.ndarray:
    half = max(1, period // 2)
    rr, cc = np.indices((rows, cols))
    return np.where((rr // half + cc // half) % 2 == 0, LOW, HIGH)


@phantom('bars')
def _bars(rows: int, cols: int, seed: int) -> np.ndarray:
    """Square-wave bars of period 2..8; vertical bars on top, horizontal below."""
    periods = np.arange(2, 9)
    image = np.empty((rows, cols))
    column_period = periods[np.minimum(np.arange(cols) * len(periods) // cols, len(periods) - 1)]
    row_period = periods[np.minimum(np.arange(rows) * len(periods) // rows, len(periods) - 1)]
    top = rows // 2
    image[:top] = np.where(np.arange(cols) % column_period < column_period / 2, HIGH, LOW)[None, :]
    image[top:] = np.where(np.arange(rows) % row_period < row_period / 2, HIGH, LOW)[top:, None]
    return image


@phantom('texture')
def _texture(rows: int, cols: int, seed: int) -> np.ndarray:
    noise = ndimage.gaussian_filter(philox(seed, PHANTOM_STREAM).standard_normal((rows, cols)), 1.5, mode='wrap')
    spread = noise.std()
    z = (noise - noise.mean()) / spread if spread > 0 else np.zeros_like(noise)
    return 1000.0 + 200.0 * z


@phantom('edges')
def _edges(rows: int, cols: int, seed: int) -> np.ndarray:
    rr, cc = np.indices((rows, cols), dtype=np.float64)
    cy, cx = (rows - 1) / 2, (cols - 1) / 2
    disc = np.hypot(rr - cy, cc - cx) < min(rows, cols) / 4
    slanted = (cc - cx) * np.cos(0.3) + (rr - cy) * np.sin(0.3) > min(rows, cols) / 3
    return 600.0 + 1000.0 * disc + 400.0 * slanted


@phantom('plaid')
def _plaid(rows: int, cols: int, seed: int, segment: int = 8) -> np.ndarray:
    """Sum of a random row staircase and a random column staircase; every edge is straight and axis aligned."""
    rng = philox(seed, PHANTOM_STREAM)
    row_levels = rng.uniform(0.0, (HIGH - LOW) / 2, -(-rows // segment))
    col_levels = rng.uniform(0.0, (HIGH - LOW) / 2, -(-cols // segment))
    return LOW + np.repeat(row_levels, segment)[:rows, None] + np.repeat(col_levels, segment)[None, :cols]


def make_phantom(kind: str, rows: int, cols: int, seed: int = 0) -> ImageGrid:
    if kind not in phantom_makers:
        raise InvalidSpecError(f'Unknown phantom {kind!r}, expected one of {", ".join(sorted(phantom_makers))}')
    if rows < 1 or cols < 1:
        raise InvalidSpecError(f'Phantom dimensions must be positive, got {rows}x{cols}')
    return ImageGrid(phantom_makers[kind](rows, cols, seed))


class KeystoneKind(Enum):
    ZERO = 'zero'
    LINEAR = 'linear'
    TABLE = 'table'


@dataclass(frozen=True)
class SceneSpec:
    hr_rows: int = 128
    hr_cols: int = 128
    scale: int = 2
    n_bands: int = 10
    phantom: str = 'texture'
    background: float = 100.0
    band_gains: Optional[Tuple[float, ...]] = None  # linspace(0.8, 1.2) when unset
    keystone: KeystoneKind = KeystoneKind.LINEAR
    dx_spread: float = 0.6
    dy_spread: float = 0.6
    keystone_table: Optional[str] = None
    psf_support: int = 2
    psf_sigmas: Optional[Tuple[float, ...]] = None  # optional per-band gaussian on top of the rect
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    snr_db: Optional[float] = None  # overrides noise.sigma per band
    seed: int = 0

    def __post_init__(self):
        if self.hr_rows < 1 or self.hr_cols < 1 or self.scale < 1 or self.n_bands < 1:
            raise InvalidSpecError('Scene dimensions, scale and band count must be positive')
        if self.hr_rows % self.scale or self.hr_cols % self.scale:
            raise InvalidSpecError(f'HR grid {self.hr_rows}x{self.hr_cols} is not divisible by scale {self.scale}')
        if self.phantom not in phantom_makers:
            raise InvalidSpecError(f'Unknown phantom {self.phantom!r}')
        if self.band_gains is not None:
            if len(self.band_gains) != self.n_bands:
                raise InvalidSpecError(f'{len(self.band_gains)} band gains for {self.n_bands} bands')
            if any(not gain > 0 for gain in self.band_gains):
                raise InvalidSpecError('Band gains must be positive')
        if self.psf_sigmas is not None:
            if len(self.psf_sigmas) != self.n_bands:
                raise InvalidSpecError(f'{len(self.psf_sigmas)} PSF sigmas for {self.n_bands} bands')
            if any(not sigma > 0 for sigma in self.psf_sigmas):
                raise InvalidSpecError('PSF sigmas must be positive')
        if self.psf_support < 1:
            raise InvalidSpecError(f'psf_support must be >= 1, got {self.psf_support}')
        bound = KeystoneModel.SHIFT_BOUND
        if abs(self.dx_spread) > bound or abs(self.dy_spread) > bound:
            raise InvalidSpecError(f'Keystone spreads must stay within ±{bound} LR pixels')
        if self.keystone is KeystoneKind.TABLE and not self.keystone_table:
            raise InvalidSpecError('keystone = table needs a keystone_table path')
        if self.seed < 0:
            raise InvalidSpecError(f'Seed must be >= 0, got {self.seed}')

    @property
    def lr_shape(self) -> Tuple[int, int]:
        return self.hr_rows // self.scale, self.hr_cols // self.scale

    def gains(self) -> np.ndarray:
        if self.band_gains is None:
            return np.linspace(0.8, 1.2, self.n_bands)
        return np.asarray(self.band_gains, dtype=np.float64)

    def psfs(self) -> Tuple[Psf, ...]:
        rect = make_rect_psf(self.psf_support)
        if self.psf_sigmas is None:
            return (rect,) * self.n_bands
        return tuple(compose_psfs([rect, make_gaussian_psf(sigma, int(np.ceil(3 * sigma)))])
                     for sigma in self.psf_sigmas)


def linear_keystone(n_bands: int, n_cols: int, dx_spread: float, dy_spread: float,
                    reference_band: Optional[int] = None) -> KeystoneModel:
    """dx(k, c) = a_k·(c − center)/center and a constant dy per band, both scaling with distance from the reference."""
    if reference_band is None:
        reference_band = default_reference_band(n_bands)
    reach = max(reference_band, n_bands - 1 - reference_band)
    amplitude = (np.arange(n_bands) - reference_band) / reach if reach else np.zeros(n_bands)
    center = (n_cols - 1) / 2
    across = (np.arange(n_cols) - center) / center if center else np.zeros(n_cols)
    dx = dx_spread * amplitude[:, None] * across[None, :]
    dy = np.repeat(dy_spread * amplitude[:, None], n_cols, axis=1)
    return KeystoneModel(reference_band, dx, dy)


def _keystone(spec: SceneSpec) -> KeystoneModel:
    n_cols = spec.lr_shape[1]
    if spec.keystone is KeystoneKind.ZERO:
        return KeystoneModel.identity(spec.n_bands, n_cols)
    if spec.keystone is KeystoneKind.LINEAR:
        return linear_keystone(spec.n_bands, n_cols, spec.dx_spread, spec.dy_spread)
    return load_keystone_table(spec.keystone_table, spec.n_bands, n_cols)


@dataclass(frozen=True)
class Acquisition:
    truth: ImageGrid
    cube: HyperCube
    keystone: KeystoneModel
    coeffs: SpectralCoeffMap
    models: Tuple[ChannelModel, ...]
    noise_sigmas: Tuple[float, ...]

    def channels(self) -> Tuple[Tuple[ImageGrid, ChannelModel], ...]:
        return tuple(zip(self.cube.bands, self.models))


def generate(spec: SceneSpec) -> Acquisition:
    truth = make_phantom(spec.phantom, spec.hr_rows, spec.hr_cols, spec.seed).pixels + spec.background
    keystone = _keystone(spec)
    psfs = spec.psfs()
    lr_shape = spec.lr_shape

    # radiance seen by each band, before the spectral coefficients exist
    radiance = [ChannelModel(band, psfs[band], keystone.shifts(band), spec.scale, np.full(lr_shape, gain)).apply(truth)
                for band, gain in enumerate(spec.gains())]
    coeffs = compute_spectral_coefficients(register_cube(HyperCube(radiance), keystone))

    models = tuple(ChannelModel(band, psfs[band], keystone.shifts(band), spec.scale, coeffs.band(band).pixels)
                   for band in range(spec.n_bands))
    rng = philox(spec.seed, NOISE_STREAM)
    bands, sigmas = [], []
    for model in models:
        clean = model.apply(truth)
        if spec.snr_db is not None:
            sigma = float(np.sqrt(np.mean(clean ** 2) / 10 ** (spec.snr_db / 10)))
        else:
            sigma = spec.noise.sigma
        noise = rng.standard_normal(lr_shape)
        bands.append(clean + sigma * noise if sigma > 0 else clean)
        sigmas.append(sigma)

    log.debug('Generated %d bands of %dx%d from a %s phantom', spec.n_bands, *lr_shape, spec.phantom)
    return Acquisition(ImageGrid(truth), HyperCube(bands), keystone, coeffs, models, tuple(sigmas))


def save_acquisition(acquisition: Acquisition, directory: str) -> Dict[str, str]:
    """Writes cube, truth raster, keystone CSV and per-band spectral coefficients; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {
        'cube': os.path.join(directory, 'cube.hdr'),
        'truth': os.path.join(directory, 'truth.hdr'),
        'keystone': os.path.join(directory, 'keystone.csv'),
        'coeffs': os.path.join(directory, 'coeffs.hdr'),
    }
    save_cube(acquisition.cube, paths['cube'])
    save_grid(acquisition.truth, paths['truth'])
    save_keystone_table(acquisition.keystone, paths['keystone'])
    save_cube(HyperCube(acquisition.coeffs.maps), paths['coeffs'])
    return paths
