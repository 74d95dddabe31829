from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np


class KeystoneSRError(Exception):
    def __init__(self, message):
        super().__init__()
        self.message = message

    def __str__(self):
        return f'{self.__class__.__name__}: {self.message}'


class InvalidGridError(KeystoneSRError):
    pass


class NumericalError(KeystoneSRError):
    pass


class InvalidSpecError(KeystoneSRError):
    pass


class ImageGrid:
    """Single-band raster of finite real values, stored row-major as float64.

    The pixel buffer is copied on construction and frozen, so grids can be
    shared between threads.
    """

    def __init__(self, pixels):
        array = np.array(pixels, dtype=np.float64)
        if array.ndim != 2:
            raise InvalidGridError(f'Expected a 2-D grid, got {array.ndim} dimensions')
        if array.shape[0] < 1 or array.shape[1] < 1:
            raise InvalidGridError(f'Empty grid {array.shape}')
        if not np.all(np.isfinite(array)):
            raise InvalidGridError('Grid contains NaN or Inf values')
        array.setflags(write=False)
        self._pixels = array

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def rows(self) -> int:
        return self._pixels.shape[0]

    @property
    def cols(self) -> int:
        return self._pixels.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self._pixels.shape

    def __array__(self, dtype=None, copy=None):
        return self._pixels if dtype is None else self._pixels.astype(dtype)

    def __repr__(self):
        return f'ImageGrid({self.rows}x{self.cols}, min={self._pixels.min():g}, max={self._pixels.max():g})'


GridLike = Union[ImageGrid, np.ndarray]


def as_pixels(img: GridLike) -> np.ndarray:
    """Returns the float64 pixel array of a grid, validating raw arrays on the way in."""
    if isinstance(img, ImageGrid):
        return img.pixels
    array = np.asarray(img, dtype=np.float64)
    if array.ndim != 2 or array.size == 0:
        raise InvalidGridError(f'Expected a non-empty 2-D grid, got shape {array.shape}')
    if not np.all(np.isfinite(array)):
        raise InvalidGridError('Grid contains NaN or Inf values')
    return array


@dataclass(frozen=True)
class BandMeta:
    index: int
    wavelength: Optional[float] = None  # nm


class HyperCube:
    def __init__(self, bands: Sequence[GridLike], band_meta: Optional[Sequence[BandMeta]] = None):
        self._bands = tuple(band if isinstance(band, ImageGrid) else ImageGrid(band) for band in bands)
        shapes = {band.shape for band in self._bands}
        if len(shapes) > 1:
            raise InvalidGridError(f'Bands have different geometry: {sorted(shapes)}')
        if band_meta is None:
            band_meta = [BandMeta(index) for index in range(len(self._bands))]
        band_meta = tuple(band_meta)
        if len(band_meta) != len(self._bands):
            raise InvalidGridError(f'{len(band_meta)} band metadata entries for {len(self._bands)} bands')
        if [meta.index for meta in band_meta] != list(range(len(band_meta))):
            raise InvalidGridError('Band indices must be unique and contiguous from 0')
        self._band_meta = band_meta

    @classmethod
    def from_array(cls, array, wavelengths: Optional[Sequence[Optional[float]]] = None) -> 'HyperCube':
        """Builds a cube from a (bands, rows, cols) array."""
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 3:
            raise InvalidGridError(f'Expected a (bands, rows, cols) array, got shape {array.shape}')
        if wavelengths is None:
            wavelengths = [None] * array.shape[0]
        meta = [BandMeta(index, None if wavelength is None else float(wavelength))
                for index, wavelength in enumerate(wavelengths)]
        return cls(list(array), meta)

    @property
    def bands(self) -> Tuple[ImageGrid, ...]:
        return self._bands

    @property
    def band_meta(self) -> Tuple[BandMeta, ...]:
        return self._band_meta

    @property
    def n_bands(self) -> int:
        return len(self._bands)

    @property
    def rows(self) -> int:
        return self._bands[0].rows if self._bands else 0

    @property
    def cols(self) -> int:
        return self._bands[0].cols if self._bands else 0

    @property
    def wavelengths(self) -> Tuple[Optional[float], ...]:
        return tuple(meta.wavelength for meta in self._band_meta)

    def as_array(self) -> np.ndarray:
        if not self._bands:
            return np.zeros((0, 0, 0))
        return np.stack([band.pixels for band in self._bands])

    def with_bands(self, bands: Sequence[GridLike]) -> 'HyperCube':
        """Same band metadata, new pixels (geometry may change, e.g. after fusion)."""
        return HyperCube(bands, self._band_meta)

    def __len__(self):
        return len(self._bands)

    def __iter__(self) -> Iterator[ImageGrid]:
        return iter(self._bands)

    def __getitem__(self, index: int) -> ImageGrid:
        return self._bands[index]

    def __repr__(self):
        return f'HyperCube({self.n_bands} bands, {self.rows}x{self.cols})'


class KeystoneModel:
    """Per-band, per-detector-column sub-pixel shifts relative to the reference band.

    ``dx`` is the pixel-direction (across-track) shift and ``dy`` the scan-direction
    shift, both in LR pixels and constant along-track for a given column.
    """

    SHIFT_BOUND = 2.0

    def __init__(self, reference_band: int, dx, dy):
        dx = np.array(dx, dtype=np.float64)
        dy = np.array(dy, dtype=np.float64)
        if dx.ndim != 2 or dx.shape != dy.shape:
            raise InvalidGridError(f'Shift tables must be (bands, columns) and equal, got {dx.shape} and {dy.shape}')
        if not 0 <= reference_band < dx.shape[0]:
            raise InvalidGridError(f'Reference band {reference_band} outside 0..{dx.shape[0] - 1}')
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))):
            raise InvalidGridError('Shift tables contain NaN or Inf values')
        if np.any(dx[reference_band] != 0) or np.any(dy[reference_band] != 0):
            raise InvalidGridError('Reference band shifts must all be zero')
        worst = max(np.abs(dx).max(initial=0.0), np.abs(dy).max(initial=0.0))
        if worst > self.SHIFT_BOUND:
            raise InvalidGridError(f'Shift {worst} exceeds the ±{self.SHIFT_BOUND} pixel bound')
        dx.setflags(write=False)
        dy.setflags(write=False)
        self._reference_band = reference_band
        self._dx = dx
        self._dy = dy

    @classmethod
    def identity(cls, n_bands: int, n_cols: int, reference_band: Optional[int] = None) -> 'KeystoneModel':
        if reference_band is None:
            reference_band = default_reference_band(n_bands)
        zeros = np.zeros((n_bands, n_cols))
        return cls(reference_band, zeros, zeros)

    @property
    def reference_band(self) -> int:
        return self._reference_band

    @property
    def n_bands(self) -> int:
        return self._dx.shape[0]

    @property
    def n_cols(self) -> int:
        return self._dx.shape[1]

    @property
    def dx(self) -> np.ndarray:
        return self._dx

    @property
    def dy(self) -> np.ndarray:
        return self._dy

    def shifts(self, band: int) -> Tuple[np.ndarray, np.ndarray]:
        if not 0 <= band < self.n_bands:
            raise InvalidGridError(f'Band {band} outside 0..{self.n_bands - 1}')
        return self._dx[band], self._dy[band]

    def is_identity(self) -> bool:
        return not (np.any(self._dx) or np.any(self._dy))

    def __eq__(self, other):
        if not isinstance(other, KeystoneModel):
            return NotImplemented
        return (self._reference_band == other._reference_band
                and np.array_equal(self._dx, other._dx) and np.array_equal(self._dy, other._dy))

    def __repr__(self):
        return f'KeystoneModel({self.n_bands} bands x {self.n_cols} columns, reference={self._reference_band})'


def default_reference_band(n_bands: int) -> int:
    # central spectral channel
    return n_bands // 2


@dataclass(frozen=True)
class NoiseSpec:
    model: str = 'gaussian'
    sigma: float = 0.0

    def __post_init__(self):
        if self.model != 'gaussian':
            raise InvalidSpecError(f'Unsupported noise model {self.model!r}')
        if not self.sigma >= 0:
            raise InvalidSpecError(f'Noise sigma must be >= 0, got {self.sigma}')
