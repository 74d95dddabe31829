"""SFIM hypersharpening: modulate each upsampled band by pan / smoothed pan."""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np

from ._types import GridLike, HyperCube, ImageGrid, InvalidGridError, NumericalError, as_pixels
from .operators import Psf, _convolve, _upsample, compose_psfs, make_rect_psf

log = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-6


def interpolation_psf(s: int) -> Psf:
    """Bilinear upsampling by s as a kernel: the s×s mean filter applied twice."""
    if s < 1:
        raise ValueError(f'Scale must be >= 1, got {s}')
    hat = s - np.abs(np.arange(1 - s, s))
    return Psf.normalized(np.outer(hat, hat))


def default_smoothing_psf(s: int, detector_support: int = 2) -> Psf:
    """Rect detector blur followed by bilinear interpolation: what the upsampled band sees of the pan."""
    return compose_psfs([make_rect_psf(detector_support), interpolation_psf(s)])


def _modulation(pan: np.ndarray, smooth: Psf, floor: float, strict: bool) -> np.ndarray:
    smoothed = _convolve(pan, smooth)
    if np.any(smoothed <= 0):
        if strict:
            raise NumericalError(f'Smoothed pan is non-positive at {int(np.sum(smoothed <= 0))} pixels')
        log.warning('Smoothed pan is non-positive at %d pixels, flooring at %g', int(np.sum(smoothed <= 0)), floor)
    return pan / np.maximum(smoothed, floor)


def _check_geometry(lr_shape, pan_shape, s: int):
    if s < 1:
        raise ValueError(f'Scale must be >= 1, got {s}')
    if pan_shape != (lr_shape[0] * s, lr_shape[1] * s):
        raise InvalidGridError(f'Pan {pan_shape} is not {s} x band {lr_shape}')


def sfim_fuse(lr_band: GridLike, pan: GridLike, s: int, smooth: Psf,
              floor: float = DENOMINATOR_FLOOR, strict: bool = True) -> ImageGrid:
    band, pan = as_pixels(lr_band), as_pixels(pan)
    _check_geometry(band.shape, pan.shape, s)
    return ImageGrid(_upsample(band, s, order=1) * _modulation(pan, smooth, floor, strict))


def fuse_cube(cube: HyperCube, pan: GridLike, s: int, smooth: Optional[Psf] = None,
              floor: float = DENOMINATOR_FLOOR, strict: bool = True, workers: int = 1) -> HyperCube:
    """SFIM per band with one shared modulation field; band metadata is kept."""
    if cube.n_bands == 0:
        raise InvalidGridError('Cannot fuse an empty cube')
    pan = as_pixels(pan)
    _check_geometry((cube.rows, cube.cols), pan.shape, s)
    if smooth is None:
        smooth = default_smoothing_psf(s)
    ratio = _modulation(pan, smooth, floor, strict)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        fused = list(pool.map(lambda band: _upsample(band.pixels, s, order=1) * ratio, cube.bands))
    log.debug('Fused %d bands at scale %d', cube.n_bands, s)
    return cube.with_bands(fused)
