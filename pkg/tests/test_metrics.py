import csv
import os
import tempfile
import unittest

import numpy as np

from keystone_sr import HyperCube, InvalidGridError, NumericalError
from keystone_sr.metrics import (ALL_METHODS, BASELINE, ComparisonReport, Method, MethodPrior, MethodResult,
                                 band_power, compare_methods, plot_profiles, psnr, radial_power_spectrum,
                                 save_report_csv, save_spectrum_csv, spectral_angle)
from keystone_sr.solver import Norm, SolverConfig
from keystone_sr.synth import SceneSpec, generate


def sinusoid(shape=(64, 64), frequency=0.25):
    cols = np.arange(shape[1])
    return np.repeat(np.sin(2 * np.pi * frequency * cols)[None, :], shape[0], axis=0)


class TestRadialSpectrum(unittest.TestCase):
    def test_constant_image_has_no_power(self):
        profile = radial_power_spectrum(np.full((16, 16), 4.0), 8)
        self.assertTrue(np.allclose(profile.power, 0.0, atol=1e-20))
        self.assertEqual(int(profile.counts.sum()), 16 * 16 - 1)

    def test_bin_centers(self):
        profile = radial_power_spectrum(np.random.default_rng(0).normal(size=(8, 8)), 5)
        self.assertTrue(np.allclose(profile.frequencies, [0.0, 0.125, 0.25, 0.375, 0.5]))
        self.assertAlmostEqual(profile.bin_width, 0.125)
        self.assertEqual(len(list(profile)), 5)

    def test_sinusoid_lands_in_one_bin(self):
        profile = radial_power_spectrum(sinusoid(), 65)
        energy = profile.power * profile.counts
        peak = int(np.argmax(energy))
        self.assertAlmostEqual(profile.frequencies[peak], 0.25)
        self.assertGreater(energy[peak], 0.99 * energy.sum())

    def test_parseval(self):
        x = np.random.default_rng(1).uniform(0, 100, (24, 40))
        profile = radial_power_spectrum(x, 16)
        self.assertAlmostEqual(float(np.sum(profile.power * profile.counts)), float(np.sum((x - x.mean()) ** 2)),
                               delta=1e-8 * float(np.sum((x - x.mean()) ** 2)))

    def test_white_noise_is_flat(self):
        profiles = [radial_power_spectrum(np.random.default_rng(seed).normal(size=(128, 128)), 64).power
                    for seed in range(10)]
        mean = np.mean(profiles, axis=0)[2:]
        self.assertLess(mean.max() / mean.min(), 3.0)

    def test_band_power(self):
        profile = radial_power_spectrum(sinusoid(), 65)
        self.assertGreater(band_power(profile), 0.0)
        self.assertAlmostEqual(band_power(profile), profile.power[32] * profile.bin_width)
        self.assertAlmostEqual(band_power(profile, 0.0, 0.2), 0.0, places=12)

    def test_invalid_input(self):
        with self.assertRaises(InvalidGridError):
            radial_power_spectrum(np.ones((1, 8)))
        with self.assertRaises(ValueError):
            radial_power_spectrum(np.ones((8, 8)), 1)


class TestPsnr(unittest.TestCase):
    def test_unit_offset(self):
        a = np.random.default_rng(2).uniform(0, 255, (10, 10))
        self.assertAlmostEqual(psnr(a + 1.0, a, 255.0), 10 * np.log10(255.0 ** 2), places=9)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(3)
        a, b = rng.uniform(0, 1, (12, 9)), rng.uniform(0, 1, (12, 9))
        mse = np.mean((a - b) ** 2)
        self.assertAlmostEqual(psnr(a, b, 1.0), 10 * np.log10(1.0 / mse), places=10)

    def test_identical(self):
        self.assertEqual(psnr(np.ones((3, 3)), np.ones((3, 3)), 1.0), float('inf'))

    def test_invalid(self):
        with self.assertRaises(InvalidGridError):
            psnr(np.ones((3, 3)), np.ones((3, 4)), 1.0)
        with self.assertRaises(ValueError):
            psnr(np.ones((3, 3)), np.ones((3, 3)), 0.0)


class TestSpectralAngle(unittest.TestCase):
    def test_scaled_spectra(self):
        cube = HyperCube.from_array(np.random.default_rng(4).uniform(1, 2, (5, 4, 4)))
        scaled = HyperCube.from_array(3.0 * cube.as_array())
        self.assertTrue(np.allclose(spectral_angle(cube, scaled).pixels, 0.0, atol=1e-5))

    def test_orthogonal_spectra(self):
        a = np.zeros((2, 2, 2))
        b = np.zeros((2, 2, 2))
        a[0] = 1.0
        b[1] = 2.0
        angles = spectral_angle(HyperCube.from_array(a), HyperCube.from_array(b)).pixels
        self.assertTrue(np.allclose(angles, 90.0))

    def test_errors(self):
        ones = HyperCube.from_array(np.ones((2, 3, 3)))
        with self.assertRaises(InvalidGridError):
            spectral_angle(ones, HyperCube.from_array(np.ones((3, 3, 3))))
        with self.assertRaises(NumericalError):
            spectral_angle(ones, HyperCube.from_array(np.zeros((2, 3, 3))))


class TestMethods(unittest.TestCase):
    parse_test_set = [
        ('L2+RBTV', Method(Norm.L2, MethodPrior.RBTV)),
        ('l1 + tv', Method(Norm.L1, MethodPrior.TV)),
        ('L1+BTV', Method(Norm.L1, MethodPrior.BTV)),
    ]

    def test_parse(self):
        for text, expected in self.parse_test_set:
            self.assertEqual(Method.parse(text), expected)

    bad_method_test_set = ['L3+TV', 'L2', 'L2+TV+BTV', 'L2+BTVX']

    def test_parse_rejects(self):
        for text in self.bad_method_test_set:
            with self.assertRaises(ValueError):
                Method.parse(text)

    def test_all_methods(self):
        self.assertEqual(sorted(method.name for method in ALL_METHODS),
                         ['L1+BTV', 'L1+RBTV', 'L1+TV', 'L2+BTV', 'L2+RBTV', 'L2+TV'])


class TestComparison(unittest.TestCase):
    def result(self, name, power):
        return MethodResult(name, None, None, power, None, 0)

    def test_claim(self):
        report = ComparisonReport(self.result(BASELINE, 1.0),
                                  (self.result('L2+RBTV', 3.0), self.result('L2+TV', 2.0)), (0.25, 0.5))
        self.assertTrue(report.claim_holds())
        self.assertFalse(report.claim_holds('L2+TV'))
        self.assertIsNone(report.claim_holds('L1+BTV'))
        self.assertEqual(report.row('L2+TV').band_power, 2.0)
        with self.assertRaises(KeyError):
            report.row('L1+TV')

    def test_compare_methods(self):
        acquisition = generate(SceneSpec(hr_rows=32, hr_cols=32, n_bands=4, seed=5))
        methods = (Method.parse('L2+RBTV'), Method.parse('L1+TV'))
        report = compare_methods(acquisition.channels(), SolverConfig(max_iters=4), methods,
                                 truth=acquisition.truth, n_bins=16, workers=2)
        self.assertEqual(report.baseline.name, BASELINE)
        self.assertEqual([result.name for result in report.results], ['L2+RBTV', 'L1+TV'])
        self.assertEqual(report.baseline.iterations, 0)
        for result in report.results:
            self.assertEqual(result.image.shape, (32, 32))
            self.assertLessEqual(result.iterations, 4)
            self.assertTrue(np.isfinite(result.psnr))
            self.assertEqual(len(result.profile.frequencies), 16)
        self.assertIn(report.claim_holds(), (True, False))
        self.assertEqual(list(report.profiles()), [BASELINE, 'L2+RBTV', 'L1+TV'])

    def test_without_truth(self):
        acquisition = generate(SceneSpec(hr_rows=16, hr_cols=16, n_bands=3, seed=6))
        report = compare_methods(acquisition.channels(), SolverConfig(max_iters=2), (Method.parse('L2+BTV'),))
        self.assertIsNone(report.results[0].psnr)
        self.assertIsNone(report.claim_holds())

    def test_no_methods(self):
        acquisition = generate(SceneSpec(hr_rows=16, hr_cols=16, n_bands=3))
        with self.assertRaises(ValueError):
            compare_methods(acquisition.channels(), SolverConfig(), ())


class TestBenchmarkOrdering(unittest.TestCase):
    report = None

    @classmethod
    def setUpClass(cls):
        # 128x128 texture, s = 2, 10 bands, ±0.6 px linear keystone, rect(2) blur, 40 dB SNR
        acquisition = generate(SceneSpec(snr_db=40.0, seed=1))
        methods = (Method.parse('L2+RBTV'), Method.parse('L1+TV'))
        cls.report = compare_methods(acquisition.channels(), SolverConfig(), methods, truth=acquisition.truth)

    def test_rbtv_keeps_the_most_high_frequency_power(self):
        self.assertTrue(self.report.claim_holds())
        leader = self.report.row('L2+RBTV').band_power
        self.assertGreater(leader, self.report.baseline.band_power)
        self.assertGreater(leader, self.report.row('L1+TV').band_power)

    def test_rbtv_beats_baseline_psnr(self):
        self.assertGreater(self.report.row('L2+RBTV').psnr, self.report.baseline.psnr)


class TestReportFiles(unittest.TestCase):
    def setUp(self):
        directory = tempfile.TemporaryDirectory()
        self.addCleanup(directory.cleanup)
        self.dir = directory.name
        self.profiles = {
            'bicubic': radial_power_spectrum(sinusoid((16, 16)), 8),
            'L2+RBTV': radial_power_spectrum(np.random.default_rng(7).normal(size=(16, 16)), 8),
        }

    def read(self, name):
        with open(os.path.join(self.dir, name), newline='') as table:
            return list(csv.reader(table))

    def test_spectrum_csv(self):
        save_spectrum_csv(self.profiles, os.path.join(self.dir, 'spectrum.csv'))
        rows = self.read('spectrum.csv')
        self.assertEqual(rows[0], ['frequency', 'bicubic', 'L2+RBTV'])
        self.assertEqual(len(rows), 9)
        self.assertAlmostEqual(float(rows[-1][0]), 0.5)

    def test_report_csv(self):
        report = ComparisonReport(MethodResult(BASELINE, None, None, 1.5, 30.25, 0),
                                  (MethodResult('L2+RBTV', None, None, 2.5, None, 7),), (0.25, 0.5))
        save_report_csv(report, os.path.join(self.dir, 'report.csv'))
        self.assertEqual(self.read('report.csv'), [
            ['method', 'psnr', 'band_power', 'iterations'],
            [BASELINE, '30.25', '1.5', '0'],
            ['L2+RBTV', '', '2.5', '7'],
        ])

    def test_plot(self):
        path = os.path.join(self.dir, 'profiles.png')
        plot_profiles(self.profiles, path)
        with open(path, 'rb') as image:
            self.assertEqual(image.read(8), b'\x89PNG\r\n\x1a\n')
