import os
import tempfile
import unittest

from keystone_sr import InvalidSpecError, NoiseSpec
from keystone_sr.config import Config, ConfigError, build_config, load_config, read_values
from keystone_sr.metrics import ALL_METHODS, Method
from keystone_sr.solver import Norm, PriorKind
from keystone_sr.synth import KeystoneKind

SAMPLE = '''
# desk-scale run
[scene]
hr_rows = 64   # HR pixels
hr_cols = 64
n_bands = 2
band_gains = 1.0, 1.5
keystone = zero
noise_sigma = 0.5

[restoration]
enabled = no
kernel_size = 7

[solver]
lambda = 0.02
P = 2
alpha = 0.3
fidelity_norm = l1
prior = btv
psf_support = 3
revert_on_increase = false

[metrics]
peak = 255

[compare]
methods = L2+RBTV, L1+TV

[io]
output_dir = results
'''


class TestConfig(unittest.TestCase):
    def config(self, text):
        return build_config(read_values(text))

    def test_defaults(self):
        self.assertEqual(self.config(''), Config())
        self.assertEqual(load_config(), Config())
        self.assertEqual(Config().methods, ALL_METHODS)

    def test_sample(self):
        config = self.config(SAMPLE)
        self.assertEqual((config.scene.hr_rows, config.scene.n_bands), (64, 2))
        self.assertEqual(config.scene.band_gains, (1.0, 1.5))
        self.assertIs(config.scene.keystone, KeystoneKind.ZERO)
        self.assertEqual(config.scene.noise, NoiseSpec(sigma=0.5))
        self.assertFalse(config.restore)
        self.assertEqual(config.restoration.kernel_size, 7)
        self.assertEqual(config.solver.lambda_, 0.02)
        self.assertEqual((config.solver.btv.P, config.solver.btv.alpha), (2, 0.3))
        self.assertIs(config.solver.fidelity_norm, Norm.L1)
        self.assertIs(config.solver.prior, PriorKind.BTV)
        self.assertFalse(config.solver.revert_on_increase)
        self.assertEqual(config.solver_psf_support, 3)
        self.assertEqual(config.metrics.peak, 255.0)
        self.assertEqual(config.methods, (Method.parse('L2+RBTV'), Method.parse('L1+TV')))
        self.assertEqual(config.io.output_dir, 'results')

    error_test_set = [
        ('hr_rows = 3', 1, 'outside of any section'),
        ('[nowhere]', 1, 'Unknown section'),
        ('[scene]\nwidth = 3', 2, 'Unknown key width'),
        ('[scene]\nhr_rows = many', 2, 'Invalid integer'),
        ('[scene]\nbackground = x', 2, 'Invalid number'),
        ('[restoration]\nstrict = maybe', 2, 'Invalid boolean'),
        ('[solver]\n\nfidelity_norm = L3', 3, 'Invalid value'),
        ('[compare]\nmethods = L2+XTV', 2, 'Unknown method'),
        ('[io]\noutput_dir =', 2, 'Empty value'),
        ('[scene]\n= 3', 2, 'Invalid syntax'),
        ('[scene]\nseed = 1\nseed = 2', 3, 'duplicate key seed'),
    ]

    def test_errors_name_the_line(self):
        for text, line_number, fragment in self.error_test_set:
            with self.assertRaises(ConfigError) as caught:
                self.config(text)
            self.assertIn(f'Line {line_number}:', str(caught.exception))
            self.assertIn(fragment, str(caught.exception))

    invalid_test_set = [
        '[restoration]\nkernel_size = 4',
        '[solver]\nP = 0',
        '[solver]\nbeta0 = 0',
        '[scene]\nhr_rows = 65',
        '[scene]\nnoise_sigma = -1',
        '[scene]\nscale = 2\n[solver]\nscale = 4',
    ]

    def test_invalid_values(self):
        for text in self.invalid_test_set:
            with self.assertRaises(InvalidSpecError):
                self.config(text)

    def test_solver_scale_follows_scene(self):
        self.assertEqual(self.config('[scene]\nscale = 4').solver.scale, 4)
        self.assertEqual(self.config('[scene]\nscale = 4\n[solver]\nscale = 4').solver.scale, 4)
        self.assertEqual(self.config('[solver]\nscale = 4').solver.scale, 4)
        self.assertEqual(self.config('').solver.scale, Config().scene.scale)

    def test_overrides(self):
        config = Config().with_overrides(seed=5, output_dir='elsewhere', skip_restore=True, paper_literal=True)
        self.assertEqual(config.scene.seed, 5)
        self.assertEqual(config.io.output_dir, 'elsewhere')
        self.assertFalse(config.restore)
        self.assertFalse(config.solver.revert_on_increase)
        self.assertEqual(Config().with_overrides(), Config())

    def test_load_file(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'run.cfg')
            with open(path, 'w') as target:
                target.write(SAMPLE)
            self.assertEqual(load_config(path), self.config(SAMPLE))
            with self.assertRaises(ConfigError):
                load_config(os.path.join(directory, 'absent.cfg'))
