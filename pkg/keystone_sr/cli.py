"""Command line entry point: ``synth``, ``run`` and ``compare``.

Exit status: 0 success, 2 configuration errors, 3 file I/O errors,
4 numerical failures, 1 anything else.
"""
import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from contextlib import contextmanager
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

from . import __version__
from ._types import HyperCube, ImageGrid, InvalidSpecError, KeystoneModel, NumericalError
from .config import Config, ConfigError, load_config
from .fusion import default_smoothing_psf, fuse_cube
from .metrics import (Method, compare_methods, plot_profiles, psnr, radial_power_spectrum, save_report_csv,
                      save_spectrum_csv)
from .operators import ChannelModel, channel_models, compute_spectral_coefficients, make_rect_psf, register_cube
from .priors import compute_rmap
from .raster import (RasterError, find_image_file, load_cube, load_grid, load_keystone_table, save_cube,
                     save_grid)
from .restoration import restore_cube
from .solver import PriorKind, initial_estimate, save_trace_csv, super_resolve
from .synth import generate, save_acquisition

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


@contextmanager
def stage(name: str):
    log.info('Stage %s', name)
    try:
        yield
    except Exception:
        log.error('Stage %s failed', name)
        raise


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as source:
        for chunk in iter(lambda: source.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def _jsonable(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Method):
        return value.name
    raise TypeError(f'{type(value).__name__} is not JSON serializable')


def write_manifest(directory: str, command: str, config: Config, inputs: Sequence[str],
                   outputs: Sequence[str], extra: Optional[dict] = None) -> str:
    """Effective parameters, input hashes and output list; no timestamps so reruns compare equal."""
    hashes = {}
    for path in inputs:
        hashes[path] = sha256_file(path)
        if path.lower().endswith('.hdr'):
            image = find_image_file(path)
            hashes[image] = sha256_file(image)
    manifest = {
        'command': command,
        'version': __version__,
        'parameters': dataclasses.asdict(config),
        'inputs': hashes,
        'outputs': sorted(os.path.basename(path) for path in outputs),
    }
    manifest.update(extra or {})
    path = os.path.join(directory, 'manifest.json')
    with open(path, 'w') as target:
        json.dump(manifest, target, indent=2, sort_keys=True, default=_jsonable)
        target.write('\n')
    return path


def _output_dir(config: Config) -> str:
    directory = config.io.output_dir
    os.makedirs(directory, exist_ok=True)
    return directory


def cmd_synth(config: Config) -> Dict[str, str]:
    directory = _output_dir(config)
    with stage('synth'):
        paths = save_acquisition(generate(config.scene), directory)
    inputs = [config.scene.keystone_table] if config.scene.keystone_table else []
    paths['manifest'] = write_manifest(directory, 'synth', config, inputs, list(paths.values()))
    return paths


def _load_inputs(config: Config) -> Tuple[HyperCube, KeystoneModel]:
    if not config.io.input_cube:
        raise ConfigError('[io] input_cube is required')
    cube = load_cube(config.io.input_cube)
    if config.io.keystone_table:
        keystone = load_keystone_table(config.io.keystone_table, cube.n_bands, cube.cols)
    else:
        log.warning('No keystone table configured, assuming registered bands')
        keystone = KeystoneModel.identity(cube.n_bands, cube.cols)
    return cube, keystone


def _input_paths(config: Config) -> List[str]:
    return [path for path in (config.io.input_cube, config.io.keystone_table, config.io.truth) if path]


def _prepare_channels(config: Config, cube: HyperCube, keystone: KeystoneModel,
                      directory: str) -> Tuple[HyperCube, Tuple[Tuple[ImageGrid, ChannelModel], ...]]:
    """Restores (unless disabled), registers and builds one channel model per band."""
    if config.restore:
        with stage('restore'):
            kernel_dir = os.path.join(directory, 'kernels')
            os.makedirs(kernel_dir, exist_ok=True)
            cube = restore_cube(cube, config.restoration, workers=config.solver.workers, kernel_dir=kernel_dir)
    with stage('coefficients'):
        registered = register_cube(cube, keystone)
        coeffs = compute_spectral_coefficients(registered)
        psfs = [make_rect_psf(config.solver_psf_support)] * cube.n_bands
        models = channel_models(coeffs, keystone, psfs, config.solver.scale)
    return registered, tuple(zip(cube.bands, models))


def cmd_run(config: Config) -> Dict[str, str]:
    directory = _output_dir(config)
    with stage('load'):
        cube, keystone = _load_inputs(config)
        truth = load_grid(config.io.truth) if config.io.truth else None
    registered, channels = _prepare_channels(config, cube, keystone, directory)

    with stage('super-resolve'):
        x0 = initial_estimate(channels)
        pan, trace = super_resolve(channels, config.solver, x0=x0)
    scale = config.solver.scale
    with stage('fuse'):
        smooth = default_smoothing_psf(config.fusion.smooth_support or scale, config.fusion.detector_support)
        fused = fuse_cube(registered, pan, scale, smooth, config.fusion.floor, config.fusion.strict,
                          workers=config.solver.workers)

    with stage('write'):
        paths = {name: os.path.join(directory, file_name) for name, file_name in (
            ('pan', 'pan.hdr'), ('fused', 'fused.hdr'), ('trace', 'trace.csv'), ('spectrum', 'spectrum.csv'))}
        save_grid(pan, paths['pan'])
        save_cube(fused, paths['fused'])
        save_trace_csv(trace, paths['trace'])
        n_bins = config.metrics.n_bins
        save_spectrum_csv({'pan': radial_power_spectrum(pan, n_bins), 'bicubic': radial_power_spectrum(x0, n_bins)},
                          paths['spectrum'])
        if config.solver.prior is PriorKind.RBTV:
            paths['rmap'] = os.path.join(directory, 'rmap_weights.hdr')
            save_grid(compute_rmap(x0, config.solver.rmap_window).w, paths['rmap'])

    extra = {'iterations': len(trace)}
    if truth is not None:
        peak = config.metrics.peak or float(truth.pixels.max())
        extra['psnr'] = {'pan': psnr(pan, truth, peak), 'bicubic': psnr(x0, truth, peak)}
    paths['manifest'] = write_manifest(directory, 'run', config, _input_paths(config), list(paths.values()), extra)
    return paths


def cmd_compare(config: Config) -> Dict[str, str]:
    directory = _output_dir(config)
    if config.io.input_cube:
        with stage('load'):
            cube, keystone = _load_inputs(config)
            truth = load_grid(config.io.truth) if config.io.truth else None
        _, channels = _prepare_channels(config, cube, keystone, directory)
    else:
        with stage('synth'):
            acquisition = generate(config.scene)
            channels, truth = acquisition.channels(), acquisition.truth

    band = (config.metrics.band_low, config.metrics.band_high)
    with stage('compare'):
        report = compare_methods(channels, config.solver, config.methods, truth=truth, n_bins=config.metrics.n_bins,
                                 peak=config.metrics.peak, band=band, workers=config.solver.workers)
    with stage('write'):
        paths = {name: os.path.join(directory, file_name) for name, file_name in (
            ('report', 'report.csv'), ('spectrum', 'spectrum.csv'), ('plot', 'profiles.png'))}
        save_report_csv(report, paths['report'])
        save_spectrum_csv(report.profiles(), paths['spectrum'])
        plot_profiles(report.profiles(), paths['plot'], band)

    claim = report.claim_holds()
    if claim is not None:
        log.info('L2+RBTV has the most power in %.2f-%.2f cycles/pixel: %s', *band, claim)
    paths['manifest'] = write_manifest(directory, 'compare', config, _input_paths(config), list(paths.values()),
                                       {'claim_holds': claim})
    return paths


COMMANDS = {
    'synth': cmd_synth,
    'run': cmd_run,
    'compare': cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='run configuration file; built-in defaults when omitted')
    common.add_argument('--output-dir', help='overrides [io] output_dir')
    common.add_argument('--seed', type=int, help='overrides [scene] seed')
    common.add_argument('--skip-restore', action='store_true', help='feed bands to the solver unrestored')
    common.add_argument('--paper-literal', action='store_true', help='keep cost-increasing solver steps')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='errors only')

    parser = argparse.ArgumentParser(prog='keystone-sr', description='Keystone-aware hyperspectral super-resolution')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', required=True)
    commands.add_parser('synth', parents=[common], help='write a synthetic dataset')
    commands.add_parser('run', parents=[common], help='restore, super-resolve and fuse a cube')
    commands.add_parser('compare', parents=[common], help='compare fidelity norm and prior combinations')
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.ERROR if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s', stream=sys.stderr)

    try:
        config = load_config(args.config).with_overrides(args.seed, args.output_dir, args.skip_restore,
                                                         args.paper_literal)
        COMMANDS[args.command](config)
    except (ConfigError, InvalidSpecError) as error:
        log.error('%s', error)
        return EXIT_CONFIG
    except (RasterError, OSError) as error:
        log.error('%s', error)
        return EXIT_IO
    except NumericalError as error:
        log.error('%s', error)
        return EXIT_NUMERICAL
    except Exception as error:
        log.exception('%s', error)
        return EXIT_FAILURE
    return EXIT_OK
