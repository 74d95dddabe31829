__version__ = '0.1.0'

from ._types import (KeystoneSRError, InvalidGridError, NumericalError, InvalidSpecError, ImageGrid, HyperCube,
                     BandMeta, KeystoneModel, NoiseSpec)
from .raster import load_cube, save_cube, load_grid, save_grid, load_keystone_table, save_keystone_table
from .operators import (Psf, make_rect_psf, make_gaussian_psf, compose_psfs, convolve, warp_shift, decimate,
                        upsample, register_cube, compute_spectral_coefficients, ChannelModel, channel_models,
                        forward, adjoint)
from .restoration import (RestorationConfig, estimate_kernel_blind, blind_deconvolve, deconvolve, nlm_denoise,
                          restore_channel)
from .priors import BtvConfig, BtvPrior, TvPrior, btv_cost, btv_subgradient, compute_rmap
from .solver import SolverConfig, CostTrace, StepSchedule, total_cost, descent_direction, super_resolve
from .fusion import sfim_fuse, fuse_cube
from .metrics import radial_power_spectrum, psnr, spectral_angle, compare_methods, Method
from .synth import SceneSpec, generate, make_phantom
