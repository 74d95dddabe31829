"""Linear operators of the channel observation model and their exact adjoints.

A channel observes the high-resolution pan ``x`` as ``S ⊙ D(M(B x))``:
``B`` blurs with a PSF, ``M`` warps by the keystone shifts (at HR geometry),
``D`` keeps every s-th sample starting at (0, 0) and ``S`` scales by the
spectral coefficient map. Every boundary is handled by edge replication.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, signal, sparse

from ._types import (GridLike, HyperCube, ImageGrid, InvalidGridError, KeystoneModel, NumericalError,
                     as_pixels)

log = logging.getLogger(__name__)

PSF_SUM_TOLERANCE = 1e-9
COEFF_DENOMINATOR_FLOOR = 1e-12

Shifts = Tuple[np.ndarray, np.ndarray]


class Psf:
    """Normalized convolution kernel. ``anchor`` is the kernel-coordinate of its optical center."""

    def __init__(self, weights, anchor: Optional[Tuple[float, float]] = None):
        weights = np.array(weights, dtype=np.float64)
        if weights.ndim != 2 or weights.size == 0:
            raise ValueError(f'PSF weights must be a non-empty 2-D grid, got shape {weights.shape}')
        if not np.all(np.isfinite(weights)):
            raise ValueError('PSF weights contain NaN or Inf')
        total = weights.sum()
        if abs(total - 1.0) > PSF_SUM_TOLERANCE:
            raise ValueError(f'PSF weights sum to {total!r}, expected 1')
        weights.setflags(write=False)
        self._weights = weights
        if anchor is None:
            anchor = ((weights.shape[0] - 1) / 2, (weights.shape[1] - 1) / 2)
        self.anchor = anchor

    @classmethod
    def normalized(cls, weights) -> 'Psf':
        weights = np.asarray(weights, dtype=np.float64)
        total = weights.sum()
        if total == 0 or not np.isfinite(total):
            raise ValueError('Cannot normalize a kernel with zero or non-finite sum')
        return cls(weights / total)

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def height(self) -> int:
        return self._weights.shape[0]

    @property
    def width(self) -> int:
        return self._weights.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self._weights.shape

    @property
    def physical(self) -> bool:
        return bool(np.all(self._weights >= 0))

    def __repr__(self):
        return f'Psf({self.height}x{self.width}, physical={self.physical})'


def make_rect_psf(support: int) -> Psf:
    """Detector-sampling blur: uniform support x support box."""
    if support <= 0:
        raise ValueError(f'Rect support must be >= 1, got {support}')
    return Psf(np.full((support, support), 1.0 / support ** 2))


def identity_psf() -> Psf:
    return make_rect_psf(1)


def make_gaussian_psf(sigma: float, radius: int) -> Psf:
    if not sigma > 0:
        raise ValueError(f'Gaussian sigma must be > 0, got {sigma}')
    if radius < 0:
        raise ValueError(f'Gaussian radius must be >= 0, got {radius}')
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    yy, xx = np.meshgrid(offsets, offsets, indexing='ij')
    return Psf.normalized(np.exp(-(xx ** 2 + yy ** 2) / (2.0 * sigma ** 2)))


def compose_psfs(psfs: Sequence[Psf]) -> Psf:
    """Blur chain B = B1 * B2 * ... as one kernel (full discrete convolution)."""
    if not psfs:
        raise ValueError('Cannot compose an empty list of PSFs')
    weights = psfs[0].weights
    for psf in psfs[1:]:
        weights = signal.convolve(weights, psf.weights, mode='full', method='direct')
    return Psf.normalized(weights)


def _edge_pads(psf_shape: Tuple[int, int]) -> Tuple[Tuple[int, int], Tuple[int, int]]:
    # kernel origin sits at index (size - 1) // 2
    return tuple((size // 2, (size - 1) // 2) for size in psf_shape)


def _edge_pad_adjoint(padded: np.ndarray, pads) -> np.ndarray:
    out = padded
    for axis, (before, after) in enumerate(pads):
        out = np.moveaxis(out, axis, 0)
        core = out[before:out.shape[0] - after].copy()
        if before:
            core[0] += out[:before].sum(axis=0)
        if after:
            core[-1] += out[out.shape[0] - after:].sum(axis=0)
        out = np.moveaxis(core, 0, axis)
    return out


def _check_kernel_fits(shape, psf: Psf):
    if psf.height > shape[0] or psf.width > shape[1]:
        raise InvalidGridError(f'Kernel {psf.shape} is larger than image {shape}')


def _convolve(x: np.ndarray, psf: Psf) -> np.ndarray:
    _check_kernel_fits(x.shape, psf)
    padded = np.pad(x, _edge_pads(psf.shape), mode='edge')
    return signal.convolve(padded, psf.weights, mode='valid', method='direct')


def _convolve_adjoint(y: np.ndarray, psf: Psf) -> np.ndarray:
    _check_kernel_fits(y.shape, psf)
    full = signal.convolve(y, psf.weights[::-1, ::-1], mode='full', method='direct')
    return _edge_pad_adjoint(full, _edge_pads(psf.shape))


def convolve(img: GridLike, psf: Psf) -> ImageGrid:
    return ImageGrid(_convolve(as_pixels(img), psf))


def convolve_adjoint(img: GridLike, psf: Psf) -> ImageGrid:
    return ImageGrid(_convolve_adjoint(as_pixels(img), psf))


def warp_matrix(shape: Tuple[int, int], shifts: Shifts) -> sparse.csr_matrix:
    """Bilinear gather matrix sampling pixel (r, c) at (r + dy[c], c + dx[c]), coordinates clamped."""
    rows, cols = shape
    dx, dy = (np.asarray(shift, dtype=np.float64) for shift in shifts)
    if dx.shape != (cols,) or dy.shape != (cols,):
        raise InvalidGridError(f'Shift table has {dx.shape}/{dy.shape} entries for {cols} columns')

    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing='ij')
    ur = np.clip(rr + dy[None, :], 0, rows - 1)
    uc = np.clip(cc + dx[None, :], 0, cols - 1)
    r0 = np.floor(ur).astype(np.int64)
    c0 = np.floor(uc).astype(np.int64)
    tr = ur - r0
    tc = uc - c0
    r1 = np.minimum(r0 + 1, rows - 1)
    c1 = np.minimum(c0 + 1, cols - 1)

    out_index = (rr * cols + cc).ravel()
    row_index = np.concatenate([out_index] * 4)
    col_index = np.concatenate([(r0 * cols + c0).ravel(), (r0 * cols + c1).ravel(),
                                (r1 * cols + c0).ravel(), (r1 * cols + c1).ravel()])
    values = np.concatenate([((1 - tr) * (1 - tc)).ravel(), ((1 - tr) * tc).ravel(),
                             (tr * (1 - tc)).ravel(), (tr * tc).ravel()])
    size = rows * cols
    return sparse.coo_matrix((values, (row_index, col_index)), shape=(size, size)).tocsr()


def warp_shift(img: GridLike, shifts: Shifts) -> ImageGrid:
    x = as_pixels(img)
    return ImageGrid((warp_matrix(x.shape, shifts) @ x.ravel()).reshape(x.shape))


def warp_shift_adjoint(img: GridLike, shifts: Shifts) -> ImageGrid:
    y = as_pixels(img)
    return ImageGrid((warp_matrix(y.shape, shifts).T @ y.ravel()).reshape(y.shape))


def _check_divisible(shape, s: int):
    if s < 1:
        raise ValueError(f'Scale must be >= 1, got {s}')
    if shape[0] % s or shape[1] % s:
        raise InvalidGridError(f'Grid {shape} is not divisible by scale {s}')


def _decimate(x: np.ndarray, s: int) -> np.ndarray:
    _check_divisible(x.shape, s)
    return x[::s, ::s]


def _decimate_adjoint(y: np.ndarray, s: int) -> np.ndarray:
    if s < 1:
        raise ValueError(f'Scale must be >= 1, got {s}')
    out = np.zeros((y.shape[0] * s, y.shape[1] * s))
    out[::s, ::s] = y
    return out


def decimate(img: GridLike, s: int) -> ImageGrid:
    return ImageGrid(_decimate(as_pixels(img), s))


def decimate_adjoint(img: GridLike, s: int) -> ImageGrid:
    return ImageGrid(_decimate_adjoint(as_pixels(img), s))


def _upsample(y: np.ndarray, s: int, order: int) -> np.ndarray:
    # LR sample (i, j) sits on HR site (s*i, s*j), matching the decimation phase
    rows, cols = y.shape
    ur, uc = np.meshgrid(np.arange(rows * s) / s, np.arange(cols * s) / s, indexing='ij')
    return ndimage.map_coordinates(y, [ur, uc], order=order, mode='nearest')


def upsample(img: GridLike, s: int, order: int = 3) -> ImageGrid:
    """Spline upsampling by ``s`` (order 3 bicubic, order 1 bilinear)."""
    if s < 1:
        raise ValueError(f'Scale must be >= 1, got {s}')
    return ImageGrid(_upsample(as_pixels(img), s, order))


def degrade(img: GridLike, psf: Psf, s: int) -> ImageGrid:
    """Blur then decimate: maps an HR band back to LR geometry."""
    return ImageGrid(_decimate(_convolve(as_pixels(img), psf), s))


def register_cube(cube: HyperCube, keystone: KeystoneModel) -> HyperCube:
    """Warps every band onto the reference band geometry using the negated keystone shifts."""
    if keystone.n_bands != cube.n_bands or keystone.n_cols != cube.cols:
        raise InvalidGridError(f'{keystone!r} does not match {cube!r}')
    bands = []
    for index, band in enumerate(cube):
        dx, dy = keystone.shifts(index)
        bands.append(band if index == keystone.reference_band else warp_shift(band, (-dx, -dy)))
    return cube.with_bands(bands)


@dataclass(frozen=True)
class SpectralCoeffMap:
    maps: Tuple[ImageGrid, ...]

    @property
    def n_bands(self) -> int:
        return len(self.maps)

    def band(self, index: int) -> ImageGrid:
        return self.maps[index]


def compute_spectral_coefficients(registered: HyperCube) -> SpectralCoeffMap:
    """S_k(i) = I_k(i) / Σ_j I_j(i) over radiance bands registered to the reference geometry."""
    if registered.n_bands == 0:
        raise InvalidGridError('Cannot build spectral coefficients for an empty cube')
    stack = registered.as_array()
    total = stack.sum(axis=0)
    if np.any(total < COEFF_DENOMINATOR_FLOOR):
        raise NumericalError(f'Spectral coefficient denominator below {COEFF_DENOMINATOR_FLOOR} '
                             f'at {int(np.sum(total < COEFF_DENOMINATOR_FLOOR))} pixels')
    if np.any(stack <= 0):
        raise NumericalError('Spectral coefficients need strictly positive radiance in every band')
    return SpectralCoeffMap(tuple(ImageGrid(band / total) for band in stack))


@dataclass(frozen=True, eq=False)
class ChannelModel:
    """One spectral channel: Y = coeffs ⊙ D(M(B x)) with x on the HR grid."""

    band: int
    psf: Psf
    shifts: Shifts  # per LR column (dx, dy), LR pixels
    scale: int
    coeffs: np.ndarray = field(repr=False)  # LR geometry

    def __post_init__(self):
        coeffs = as_pixels(self.coeffs)
        dx, dy = (np.asarray(shift, dtype=np.float64) for shift in self.shifts)
        if self.scale < 1:
            raise ValueError(f'Scale must be >= 1, got {self.scale}')
        if dx.shape != (coeffs.shape[1],) or dy.shape != (coeffs.shape[1],):
            raise InvalidGridError(f'Channel {self.band}: shifts must cover all {coeffs.shape[1]} LR columns')
        object.__setattr__(self, 'coeffs', coeffs)
        object.__setattr__(self, 'shifts', (dx, dy))

    @property
    def lr_shape(self) -> Tuple[int, int]:
        return self.coeffs.shape

    @property
    def hr_shape(self) -> Tuple[int, int]:
        return self.coeffs.shape[0] * self.scale, self.coeffs.shape[1] * self.scale

    @cached_property
    def _warp(self) -> sparse.csr_matrix:
        # LR shifts expressed on the HR grid
        dx, dy = (self.scale * np.repeat(shift, self.scale) for shift in self.shifts)
        return warp_matrix(self.hr_shape, (dx, dy))

    @cached_property
    def _warp_t(self) -> sparse.csr_matrix:
        return self._warp.T.tocsr()

    def apply(self, x: np.ndarray) -> np.ndarray:
        if x.shape != self.hr_shape:
            raise InvalidGridError(f'Channel {self.band}: HR input {x.shape} != {self.hr_shape}')
        blurred = _convolve(x, self.psf)
        warped = (self._warp @ blurred.ravel()).reshape(self.hr_shape)
        return self.coeffs * _decimate(warped, self.scale)

    def apply_adjoint(self, r: np.ndarray) -> np.ndarray:
        if r.shape != self.lr_shape:
            raise InvalidGridError(f'Channel {self.band}: LR input {r.shape} != {self.lr_shape}')
        upsampled = _decimate_adjoint(self.coeffs * r, self.scale)
        unwarped = (self._warp_t @ upsampled.ravel()).reshape(self.hr_shape)
        return _convolve_adjoint(unwarped, self.psf)


def forward(x: GridLike, ch: ChannelModel) -> ImageGrid:
    return ImageGrid(ch.apply(as_pixels(x)))


def adjoint(r: GridLike, ch: ChannelModel) -> ImageGrid:
    return ImageGrid(ch.apply_adjoint(as_pixels(r)))


def channel_models(coeffs: SpectralCoeffMap, keystone: KeystoneModel, psfs: Sequence[Psf],
                   scale: int) -> Tuple[ChannelModel, ...]:
    """One ChannelModel per band, pairing the coefficient map with the band's keystone shifts."""
    if not (coeffs.n_bands == keystone.n_bands == len(psfs)):
        raise InvalidGridError(f'{coeffs.n_bands} coefficient maps, {keystone.n_bands} keystone bands '
                               f'and {len(psfs)} PSFs do not line up')
    return tuple(ChannelModel(band, psfs[band], keystone.shifts(band), scale, coeffs.band(band).pixels)
                 for band in range(coeffs.n_bands))
