import os
import tempfile
import unittest

import numpy as np

from keystone_sr import InvalidSpecError, NoiseSpec
from keystone_sr.raster import load_cube, load_grid, load_keystone_table, save_keystone_table
from keystone_sr.solver import SolverConfig, total_cost
from keystone_sr.synth import (KeystoneKind, SceneSpec, generate, linear_keystone, make_phantom, phantom_makers,
                               save_acquisition)

SMALL = dict(hr_rows=32, hr_cols=32, n_bands=4)


class TestPhantoms(unittest.TestCase):
    def test_all_kinds(self):
        for kind in sorted(phantom_makers):
            image = make_phantom(kind, 20, 24, seed=1)
            self.assertEqual(image.shape, (20, 24))
            self.assertTrue(np.all(image.pixels >= 0))

    def test_ramp(self):
        self.assertTrue(np.array_equal(make_phantom('ramp', 2, 3).pixels, [[0, 1, 2], [3, 4, 5]]))

    def test_checker(self):
        image = make_phantom('checker', 4, 4).pixels
        self.assertEqual(set(np.unique(image)), {500.0, 1500.0})
        self.assertNotEqual(image[0, 0], image[0, 1])
        self.assertEqual(image[0, 0], image[1, 1])

    def test_texture_reproducible(self):
        first = make_phantom('texture', 32, 32, seed=7)
        self.assertTrue(np.array_equal(first.pixels, make_phantom('texture', 32, 32, seed=7).pixels))
        self.assertFalse(np.array_equal(first.pixels, make_phantom('texture', 32, 32, seed=8).pixels))

    def test_texture_statistics(self):
        means = [make_phantom('texture', 64, 64, seed=seed).pixels.mean() for seed in range(10)]
        self.assertTrue(all(abs(mean - 1000.0) < 10.0 for mean in means))

    def test_unknown_kind(self):
        with self.assertRaises(InvalidSpecError):
            make_phantom('spiral', 8, 8)


class TestSceneSpec(unittest.TestCase):
    invalid_test_set = [
        {'hr_rows': 65},
        {'scale': 3, 'hr_rows': 64, 'hr_cols': 64},
        {'n_bands': 0},
        {'phantom': 'spiral'},
        {'band_gains': (1.0, 2.0)},
        {'n_bands': 2, 'band_gains': (1.0, 0.0)},
        {'psf_sigmas': (1.0,)},
        {'psf_support': 0},
        {'dx_spread': 2.5},
        {'keystone': KeystoneKind.TABLE},
        {'seed': -1},
    ]

    def test_invalid(self):
        for kwargs in self.invalid_test_set:
            with self.assertRaises(InvalidSpecError):
                SceneSpec(**kwargs)

    def test_scale_three(self):
        self.assertEqual(SceneSpec(hr_rows=63, hr_cols=66, scale=3).lr_shape, (21, 22))

    def test_default_gains(self):
        gains = SceneSpec(n_bands=5).gains()
        self.assertTrue(np.allclose(gains, [0.8, 0.9, 1.0, 1.1, 1.2]))

    def test_noise_spec(self):
        with self.assertRaises(InvalidSpecError):
            NoiseSpec(sigma=-1.0)
        with self.assertRaises(InvalidSpecError):
            NoiseSpec(model='poisson')


class TestLinearKeystone(unittest.TestCase):
    def test_shape_and_reference(self):
        model = linear_keystone(5, 9, 0.6, 0.3)
        self.assertEqual(model.reference_band, 2)
        self.assertTrue(np.array_equal(model.dx[2], np.zeros(9)))
        self.assertAlmostEqual(model.dx[0, 0], 0.6)
        self.assertAlmostEqual(model.dx[4, 8], 0.6)
        self.assertAlmostEqual(model.dx[4, 4], 0.0)
        self.assertTrue(np.allclose(model.dy[0], -0.3))
        self.assertLessEqual(np.abs(model.dx).max(), 0.6 + 1e-12)

    def test_single_band(self):
        self.assertTrue(linear_keystone(1, 4, 0.6, 0.6).is_identity())


class TestGenerate(unittest.TestCase):
    def test_noiseless_bands_follow_the_forward_model(self):
        acquisition = generate(SceneSpec(**SMALL))
        for band, model in zip(acquisition.cube, acquisition.models):
            self.assertTrue(np.array_equal(band.pixels, model.apply(acquisition.truth.pixels)))
        cost = total_cost(acquisition.truth, acquisition.channels(), SolverConfig(lambda_=0.0))
        self.assertEqual(cost[0], 0.0)

    def test_equal_gains_split_evenly(self):
        spec = SceneSpec(phantom='ramp', hr_rows=8, hr_cols=8, n_bands=4, band_gains=(1.0,) * 4,
                         keystone=KeystoneKind.ZERO, background=1.0, psf_support=1)
        acquisition = generate(spec)
        for band in acquisition.cube:
            self.assertTrue(np.allclose(band.pixels, acquisition.truth.pixels[::2, ::2] / 4, rtol=1e-12, atol=1e-12))

    def test_coefficients_sum_to_one(self):
        acquisition = generate(SceneSpec(**SMALL))
        total = sum(coeff.pixels for coeff in acquisition.coeffs.maps)
        self.assertTrue(np.allclose(total, 1.0, atol=1e-12))

    def test_deterministic(self):
        spec = SceneSpec(noise=NoiseSpec(sigma=0.5), seed=11, **SMALL)
        first, second = generate(spec), generate(spec)
        self.assertTrue(np.array_equal(first.cube.as_array(), second.cube.as_array()))
        other = generate(SceneSpec(noise=NoiseSpec(sigma=0.5), seed=12, **SMALL))
        self.assertFalse(np.array_equal(first.cube.as_array(), other.cube.as_array()))

    def test_noise_is_additive(self):
        spec = SceneSpec(noise=NoiseSpec(sigma=0.5), seed=3, **SMALL)
        noisy = generate(spec)
        for band, model, sigma in zip(noisy.cube, noisy.models, noisy.noise_sigmas):
            self.assertEqual(sigma, 0.5)
            residual = band.pixels - model.apply(noisy.truth.pixels)
            self.assertLess(abs(residual.std() - 0.5), 0.1)

    def test_snr(self):
        acquisition = generate(SceneSpec(snr_db=40.0, hr_rows=128, hr_cols=128, n_bands=3, seed=4))
        for band, model in zip(acquisition.cube, acquisition.models):
            clean = model.apply(acquisition.truth.pixels)
            measured = 10 * np.log10(np.mean(clean ** 2) / np.mean((band.pixels - clean) ** 2))
            self.assertLess(abs(measured - 40.0), 0.5)

    def test_per_band_blur(self):
        spec = SceneSpec(psf_sigmas=(0.5, 1.0, 1.5, 2.0), **SMALL)
        acquisition = generate(spec)
        self.assertEqual([model.psf.shape for model in acquisition.models], [(6, 6), (8, 8), (12, 12), (14, 14)])

    def test_keystone_table(self):
        with tempfile.TemporaryDirectory() as directory:
            table = os.path.join(directory, 'keystone.csv')
            save_keystone_table(linear_keystone(4, 16, 0.4, 0.2), table)
            acquisition = generate(SceneSpec(keystone=KeystoneKind.TABLE, keystone_table=table, **SMALL))
        self.assertEqual(acquisition.keystone, linear_keystone(4, 16, 0.4, 0.2))


class TestSaveAcquisition(unittest.TestCase):
    def test_files(self):
        acquisition = generate(SceneSpec(noise=NoiseSpec(sigma=0.1), **SMALL))
        with tempfile.TemporaryDirectory() as directory:
            paths = save_acquisition(acquisition, directory)
            self.assertEqual(sorted(paths), ['coeffs', 'cube', 'keystone', 'truth'])
            cube = load_cube(paths['cube'])
            self.assertTrue(np.allclose(cube.as_array(), acquisition.cube.as_array(), rtol=1e-6))
            self.assertEqual(load_grid(paths['truth']).shape, (32, 32))
            self.assertEqual(load_keystone_table(paths['keystone'], 4, 16).reference_band, 2)
            self.assertEqual(load_cube(paths['coeffs']).n_bands, 4)
