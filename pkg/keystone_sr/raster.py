"""File I/O for cubes, single rasters, keystone shift tables and kernel dumps.

Cubes are ENVI-style: a plain-text ``.hdr`` header next to a raw binary. Cubes are
always written band-sequential, little-endian float32; reading accepts the
integer and float sample types listed in ``SAMPLE_TYPES`` and any interleave
Spectral Python understands.
"""
import csv
import logging
import os
from typing import Optional

import numpy as np
import spectral.io.envi as envi

from ._types import (KeystoneSRError, HyperCube, BandMeta, ImageGrid, KeystoneModel, GridLike,
                     as_pixels, default_reference_band)
from .operators import Psf

log = logging.getLogger(__name__)

# ENVI "data type" codes understood by load_cube
SAMPLE_TYPES = {
    1: np.uint8,
    2: np.int16,
    3: np.int32,
    4: np.float32,
    5: np.float64,
    12: np.uint16,
    13: np.uint32,
}

IMAGE_EXTENSIONS = ('.img', '.dat', '.raw', '.bsq', '')

KEYSTONE_COLUMNS = ['band', 'column', 'dx', 'dy']


class RasterError(KeystoneSRError):
    pass


class MissingFileError(RasterError):
    pass


class SizeMismatchError(RasterError):
    pass


class UnsupportedSampleTypeError(RasterError):
    pass


class UnwritablePathError(RasterError):
    pass


class KeystoneTableError(RasterError):
    pass


def _header_int(header: dict, key: str, header_path: str) -> int:
    try:
        return int(header[key])
    except KeyError:
        raise RasterError(f'{header_path}: missing header key {key!r}')
    except ValueError:
        raise RasterError(f'{header_path}: header key {key!r} is not an integer: {header[key]!r}')


def _header_floats(header: dict, key: str, n_bands: int, header_path: str) -> Optional[np.ndarray]:
    if key not in header:
        return None
    values = header[key]
    if isinstance(values, str):
        values = [values]
    try:
        values = np.array([float(value) for value in values])
    except ValueError:
        raise RasterError(f'{header_path}: header key {key!r} holds non-numeric values')
    if len(values) != n_bands:
        raise RasterError(f'{header_path}: header key {key!r} has {len(values)} values for {n_bands} bands')
    return values


def find_image_file(header_path: str) -> str:
    stem = header_path[:-len('.hdr')] if header_path.lower().endswith('.hdr') else header_path
    for extension in IMAGE_EXTENSIONS:
        candidate = stem + extension
        if candidate != header_path and os.path.isfile(candidate):
            return candidate
    raise MissingFileError(f'No binary found next to {header_path} (tried {", ".join(IMAGE_EXTENSIONS[:-1])})')


def load_cube(header_path: str) -> HyperCube:
    header_path = os.fspath(header_path)
    if not os.path.isfile(header_path):
        raise MissingFileError(f'Header file {header_path} does not exist')
    try:
        header = envi.read_envi_header(header_path)
    except envi.EnviException as error:
        raise RasterError(f'{header_path}: unreadable ENVI header ({error})')

    samples = _header_int(header, 'samples', header_path)
    lines = _header_int(header, 'lines', header_path)
    n_bands = _header_int(header, 'bands', header_path)
    data_type = _header_int(header, 'data type', header_path)
    offset = int(header.get('header offset', 0))
    if data_type not in SAMPLE_TYPES:
        raise UnsupportedSampleTypeError(f'{header_path}: ENVI data type {data_type} is not supported')

    image_path = find_image_file(header_path)
    expected = offset + samples * lines * n_bands * np.dtype(SAMPLE_TYPES[data_type]).itemsize
    actual = os.path.getsize(image_path)
    if actual != expected:
        raise SizeMismatchError(f'{image_path}: header declares {n_bands}x{lines}x{samples} '
                                f'({expected} bytes) but the binary holds {actual} bytes')

    # (lines, samples, bands) -> (bands, lines, samples)
    data = envi.open(header_path, image_path).load(dtype=np.float64)
    data = np.array(np.asarray(data).reshape(lines, samples, n_bands).transpose(2, 0, 1))

    gains = _header_floats(header, 'data gain values', n_bands, header_path)
    offsets = _header_floats(header, 'data offset values', n_bands, header_path)
    if gains is not None or offsets is not None:
        log.debug('%s: converting DN to radiance with per-band gain/offset', header_path)
        if gains is not None:
            data = data * gains[:, None, None]
        if offsets is not None:
            data = data + offsets[:, None, None]

    wavelengths = _header_floats(header, 'wavelength', n_bands, header_path)
    meta = [BandMeta(index, None if wavelengths is None else float(wavelengths[index]))
            for index in range(n_bands)]
    log.debug('Loaded %s: %d bands of %dx%d', header_path, n_bands, lines, samples)
    return HyperCube(list(data), meta)


def save_cube(cube: HyperCube, header_path: str) -> None:
    header_path = os.fspath(header_path)
    if cube.n_bands == 0:
        raise RasterError('Refusing to write a cube without bands')
    if not header_path.lower().endswith('.hdr'):
        raise UnwritablePathError(f'Header path {header_path} must end with .hdr')
    directory = os.path.dirname(os.path.abspath(header_path))
    if not os.path.isdir(directory) or not os.access(directory, os.W_OK):
        raise UnwritablePathError(f'Directory {directory} is missing or not writable')

    metadata = {'description': 'keystone-sr', 'band names': [f'band {meta.index}' for meta in cube.band_meta]}
    if all(wavelength is not None for wavelength in cube.wavelengths):
        metadata['wavelength'] = [repr(float(wavelength)) for wavelength in cube.wavelengths]
        metadata['wavelength units'] = 'nm'

    data = cube.as_array().transpose(1, 2, 0).astype(np.float32)
    try:
        envi.save_image(header_path, data, dtype=np.float32, interleave='bsq', byteorder=0,
                        ext='.img', force=True, metadata=metadata)
    except (OSError, envi.EnviException) as error:
        raise UnwritablePathError(f'Cannot write {header_path}: {error}')
    log.debug('Saved %r to %s', cube, header_path)


def load_grid(header_path: str) -> ImageGrid:
    cube = load_cube(header_path)
    if cube.n_bands != 1:
        raise RasterError(f'{header_path}: expected a single-band raster, found {cube.n_bands} bands')
    return cube[0]


def save_grid(img: GridLike, header_path: str) -> None:
    save_cube(HyperCube([as_pixels(img)]), header_path)


def load_keystone_table(path: str, n_bands: int, n_cols: int,
                        reference_band: Optional[int] = None) -> KeystoneModel:
    """Reads a ``band,column,dx,dy`` CSV. Reference band rows may be omitted; when
    present they must be zero."""
    path = os.fspath(path)
    if reference_band is None:
        reference_band = default_reference_band(n_bands)
    if not os.path.isfile(path):
        raise MissingFileError(f'Keystone table {path} does not exist')

    dx = np.zeros((n_bands, n_cols))
    dy = np.zeros((n_bands, n_cols))
    seen = np.zeros((n_bands, n_cols), dtype=bool)
    bound = KeystoneModel.SHIFT_BOUND

    with open(path, newline='') as table:
        reader = csv.DictReader(table)
        if reader.fieldnames is None or [name.strip() for name in reader.fieldnames] != KEYSTONE_COLUMNS:
            raise KeystoneTableError(f'{path}: header row must be {",".join(KEYSTONE_COLUMNS)}')
        for row in reader:
            where = f'{path}:{reader.line_num}'
            try:
                band, column = int(row['band']), int(row['column'])
                row_dx, row_dy = float(row['dx']), float(row['dy'])
            except (TypeError, ValueError):
                raise KeystoneTableError(f'{where}: malformed row {row}')
            if not (0 <= band < n_bands and 0 <= column < n_cols):
                raise KeystoneTableError(f'{where}: pair ({band}, {column}) outside {n_bands} bands x {n_cols} columns')
            if not (np.isfinite(row_dx) and np.isfinite(row_dy)):
                raise KeystoneTableError(f'{where}: non-finite shift')
            if abs(row_dx) > bound or abs(row_dy) > bound:
                raise KeystoneTableError(f'{where}: shift ({row_dx}, {row_dy}) exceeds the ±{bound} pixel bound')
            if seen[band, column]:
                raise KeystoneTableError(f'{where}: duplicate pair ({band}, {column})')
            if band == reference_band and (row_dx != 0 or row_dy != 0):
                raise KeystoneTableError(f'{where}: reference band {band} must have zero shifts')
            seen[band, column] = True
            dx[band, column] = row_dx
            dy[band, column] = row_dy

    seen[reference_band] = True
    if not seen.all():
        missing = np.argwhere(~seen)
        shown = ', '.join(f'({band}, {column})' for band, column in missing[:5])
        raise KeystoneTableError(f'{path}: {len(missing)} missing (band, column) pairs, e.g. {shown}')
    return KeystoneModel(reference_band, dx, dy)


def save_keystone_table(model: KeystoneModel, path: str) -> None:
    with open(path, 'w', newline='') as table:
        writer = csv.writer(table, lineterminator='\n')
        writer.writerow(KEYSTONE_COLUMNS)
        for band in range(model.n_bands):
            if band == model.reference_band:
                continue
            dx, dy = model.shifts(band)
            for column in range(model.n_cols):
                writer.writerow([band, column, repr(float(dx[column])), repr(float(dy[column]))])


def save_psf_csv(psf: Psf, path: str) -> None:
    with open(path, 'w', newline='') as dump:
        writer = csv.writer(dump, lineterminator='\n')
        for row in psf.weights:
            writer.writerow([repr(float(value)) for value in row])


def load_psf_csv(path: str) -> Psf:
    if not os.path.isfile(path):
        raise MissingFileError(f'Kernel dump {path} does not exist')
    with open(path, newline='') as dump:
        rows = [[float(value) for value in row] for row in csv.reader(dump) if row]
    return Psf(np.array(rows))
