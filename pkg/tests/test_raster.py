import os
import re
import tempfile
import unittest

import numpy as np

from keystone_sr import HyperCube, ImageGrid, InvalidGridError, KeystoneModel
from keystone_sr.raster import (KeystoneTableError, MissingFileError, RasterError, SizeMismatchError,
                                UnsupportedSampleTypeError, UnwritablePathError, load_cube, load_grid,
                                load_keystone_table, load_psf_csv, save_cube, save_grid, save_keystone_table,
                                save_psf_csv)
from keystone_sr.operators import make_gaussian_psf
from keystone_sr.synth import linear_keystone


class TestCubeFiles(unittest.TestCase):
    def setUp(self):
        directory = tempfile.TemporaryDirectory()
        self.addCleanup(directory.cleanup)
        self.dir = directory.name

    def path(self, name):
        return os.path.join(self.dir, name)

    def rewrite_header(self, header_path, pattern, replacement):
        with open(header_path) as header:
            text = header.read()
        text, replaced = re.subn(pattern, replacement, text)
        self.assertEqual(replaced, 1)
        with open(header_path, 'w') as header:
            header.write(text)

    def round_trip(self, cube):
        save_cube(cube, self.path('cube.hdr'))
        return load_cube(self.path('cube.hdr'))

    round_trip_test_set = [
        np.arange(32, dtype=np.float64).reshape(2, 4, 4),
        np.array([[[42.0]]]),
        np.random.default_rng(7).normal(100, 30, (3, 8, 8)).astype(np.float32).astype(np.float64),
        np.random.default_rng(8).uniform(-1, 1, (1, 5, 3)).astype(np.float32).astype(np.float64),
    ]

    def test_round_trip(self):
        for array in self.round_trip_test_set:
            loaded = self.round_trip(HyperCube.from_array(array))
            self.assertEqual(loaded.n_bands, array.shape[0])
            self.assertTrue(np.array_equal(loaded.as_array(), array))

    def test_single_sample_file(self):
        save_cube(HyperCube.from_array([[[42.0]]]), self.path('one.hdr'))
        self.assertEqual(os.path.getsize(self.path('one.img')), 4)
        self.assertEqual(load_cube(self.path('one.hdr'))[0].pixels[0, 0], 42.0)

    def test_wavelengths_survive(self):
        cube = HyperCube.from_array(np.ones((3, 2, 2)), wavelengths=[450.5, 550.0, 650.25])
        self.assertEqual(self.round_trip(cube).wavelengths, (450.5, 550.0, 650.25))

    def test_grid_helpers(self):
        grid = ImageGrid(np.arange(6.0).reshape(2, 3))
        save_grid(grid, self.path('grid.hdr'))
        self.assertTrue(np.array_equal(load_grid(self.path('grid.hdr')).pixels, grid.pixels))
        save_cube(HyperCube.from_array(np.ones((2, 2, 2))), self.path('two.hdr'))
        with self.assertRaises(RasterError):
            load_grid(self.path('two.hdr'))

    def test_size_mismatch(self):
        save_cube(HyperCube.from_array(np.ones((2, 4, 4))), self.path('cube.hdr'))
        self.rewrite_header(self.path('cube.hdr'), r'bands\s*=\s*2', 'bands = 3')
        with self.assertRaises(SizeMismatchError):
            load_cube(self.path('cube.hdr'))

    def test_unsupported_sample_type(self):
        save_cube(HyperCube.from_array(np.ones((1, 2, 2))), self.path('cube.hdr'))
        self.rewrite_header(self.path('cube.hdr'), r'data type\s*=\s*4', 'data type = 6')
        with self.assertRaises(UnsupportedSampleTypeError):
            load_cube(self.path('cube.hdr'))

    def test_gain_and_offset_applied(self):
        save_cube(HyperCube.from_array(np.full((2, 2, 2), 3.0)), self.path('cube.hdr'))
        with open(self.path('cube.hdr'), 'a') as header:
            header.write('data gain values = {2.0, 0.5}\ndata offset values = {1.0, 0.0}\n')
        loaded = load_cube(self.path('cube.hdr')).as_array()
        self.assertTrue(np.all(loaded[0] == 7.0))
        self.assertTrue(np.all(loaded[1] == 1.5))

    def test_missing_files(self):
        with self.assertRaises(MissingFileError):
            load_cube(self.path('absent.hdr'))
        save_cube(HyperCube.from_array(np.ones((1, 2, 2))), self.path('cube.hdr'))
        os.remove(self.path('cube.img'))
        with self.assertRaises(MissingFileError):
            load_cube(self.path('cube.hdr'))

    def test_rejected_writes(self):
        with self.assertRaises(RasterError):
            save_cube(HyperCube([]), self.path('empty.hdr'))
        self.assertFalse(os.path.exists(self.path('empty.hdr')))
        with self.assertRaises(UnwritablePathError):
            save_cube(HyperCube.from_array(np.ones((1, 2, 2))), self.path(os.path.join('missing', 'cube.hdr')))

    def test_nan_rejected(self):
        with self.assertRaises(InvalidGridError):
            ImageGrid([[1.0, float('nan')]])


class TestKeystoneTables(unittest.TestCase):
    def setUp(self):
        directory = tempfile.TemporaryDirectory()
        self.addCleanup(directory.cleanup)
        self.table = os.path.join(directory.name, 'keystone.csv')

    def write_table(self, rows):
        with open(self.table, 'w') as table:
            table.write('band,column,dx,dy\n')
            for row in rows:
                table.write(','.join(str(value) for value in row) + '\n')

    def test_zero_table_is_identity(self):
        self.write_table([(band, column, 0.0, 0.0) for band in (0, 2) for column in range(4)])
        model = load_keystone_table(self.table, 3, 4)
        self.assertEqual(model.reference_band, 1)
        self.assertTrue(model.is_identity())
        self.assertEqual(model, KeystoneModel.identity(3, 4))

    def test_round_trip(self):
        model = linear_keystone(5, 7, 0.6, 0.3)
        save_keystone_table(model, self.table)
        self.assertEqual(load_keystone_table(self.table, 5, 7), model)

    def test_full_size_table(self):
        save_keystone_table(linear_keystone(60, 1000, 0.6, 0.6), self.table)
        with open(self.table) as table:
            self.assertEqual(sum(1 for _ in table) - 1, 59000)
        model = load_keystone_table(self.table, 60, 1000)
        self.assertEqual(model.reference_band, 30)
        self.assertEqual(model.n_cols, 1000)

    bad_table_test_set = [
        ([(0, 0, 5.0, 0.0), (0, 1, 0.0, 0.0)], 'exceeds'),
        ([(0, 0, 0.1, 0.0), (0, 0, 0.1, 0.0), (0, 1, 0.0, 0.0)], 'duplicate'),
        ([(0, 0, 0.1, 0.0)], 'missing'),
        ([(0, 0, 0.1, 0.0), (0, 1, 0.0, 0.0), (1, 0, 0.5, 0.0)], 'reference band'),
        ([(0, 0, 'x', 0.0), (0, 1, 0.0, 0.0)], 'malformed'),
        ([(0, 0, 0.1, 0.0), (0, 1, 0.0, 0.0), (4, 0, 0.0, 0.0)], 'outside'),
    ]

    def test_bad_tables(self):
        for rows, fragment in self.bad_table_test_set:
            self.write_table(rows)
            with self.assertRaises(KeystoneTableError) as caught:
                load_keystone_table(self.table, 2, 2)
            self.assertIn(fragment, str(caught.exception))

    def test_bad_header(self):
        with open(self.table, 'w') as table:
            table.write('band,col,dx,dy\n')
        with self.assertRaises(KeystoneTableError):
            load_keystone_table(self.table, 2, 2)

    def test_psf_dump(self):
        psf = make_gaussian_psf(1.0, 2)
        path = self.table.replace('keystone.csv', 'kernel.csv')
        save_psf_csv(psf, path)
        self.assertTrue(np.array_equal(load_psf_csv(path).weights, psf.weights))
