"""Per-channel pre-processing: remove the channel's own low-resolution blur, then denoise.

After this stage only the detector-sampling blur is left for the super-resolution
solver to model.

The blur is modelled as a centered gaussian. Its width comes from how much gradient
energy the image loses under a known extra blur: a step edge blurred by a profile u
keeps ‖u‖² of gradient energy, and ‖u ∗ u0‖² after re-blurring by u0, so the energy
ratio pins down u. Images whose edges look as sharp as the sampling allows get the
identity kernel and are passed through without deconvolution.
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage, signal
from skimage.restoration import denoise_nl_means, estimate_sigma

from ._types import GridLike, HyperCube, ImageGrid, InvalidGridError, InvalidSpecError, NumericalError, as_pixels
from .operators import Psf, identity_psf, make_gaussian_psf
from .raster import save_psf_csv

log = logging.getLogger(__name__)

RL_FLOOR = 1e-12
REBLUR_SIGMA = 1.0
REBLUR_RADIUS = 3
SHARP_SIGMA = 0.3  # narrower blurs are indistinguishable from the sampling itself
NOISE_DOMINATED = 0.1  # minimum share of gradient energy that must come from the signal


class DegenerateImageError(NumericalError):
    pass


@dataclass(frozen=True)
class RestorationConfig:
    kernel_size: int = 7
    blind_iters: int = 10
    rl_inner_iters: int = 5
    refine_kernel: bool = False  # alternating Richardson-Lucy updates on top of the gaussian fit
    deconv_reg: float = 1e-3
    nlm_strength: float = 1.0  # h as a multiple of the noise sigma
    nlm_patch: int = 3
    nlm_search: int = 10
    noise_sigma: Optional[float] = None  # estimated from the image when unset
    strict: bool = True

    def __post_init__(self):
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise InvalidSpecError(f'kernel_size must be odd and >= 3, got {self.kernel_size}')
        for name in ('blind_iters', 'rl_inner_iters', 'nlm_patch', 'nlm_search'):
            if getattr(self, name) < 1:
                raise InvalidSpecError(f'{name} must be >= 1, got {getattr(self, name)}')
        if self.deconv_reg < 0:
            raise InvalidSpecError(f'deconv_reg must be >= 0, got {self.deconv_reg}')
        if not self.nlm_strength > 0:
            raise InvalidSpecError(f'nlm_strength must be > 0, got {self.nlm_strength}')
        if self.noise_sigma is not None and self.noise_sigma < 0:
            raise InvalidSpecError(f'noise_sigma must be >= 0, got {self.noise_sigma}')


def _recenter(kernel: np.ndarray) -> np.ndarray:
    total = kernel.sum()
    grid = np.indices(kernel.shape)
    centroid = np.array([(axis * kernel).sum() / total for axis in grid])
    center = (np.array(kernel.shape) - 1) / 2
    shifted = ndimage.shift(kernel, center - centroid, order=1, mode='constant', cval=0.0)
    return _project(shifted)


def _project(kernel: np.ndarray) -> np.ndarray:
    kernel = np.maximum(kernel, 0.0)
    total = kernel.sum()
    if total <= 0:
        raise NumericalError('Blind kernel estimate collapsed to zero')
    return kernel / total


def _kernel_lags(ratio: np.ndarray, image: np.ndarray, size: int) -> np.ndarray:
    """Correlation of ``ratio`` with ``image`` at lags -c..c, c = size // 2."""
    full = signal.fftconvolve(ratio, image[::-1, ::-1], mode='full')
    center = np.array(image.shape) - 1
    half = size // 2
    return full[center[0] - half:center[0] + half + 1, center[1] - half:center[1] + half + 1]


def _delta(size: int) -> np.ndarray:
    kernel = np.zeros((size, size))
    kernel[size // 2, size // 2] = 1.0
    return kernel


def is_identity_kernel(psf: Psf) -> bool:
    center = (psf.height // 2, psf.width // 2)
    return psf.height % 2 == 1 and psf.width % 2 == 1 and psf.weights[center] == 1.0


def _gaussian_taps(sigma: float, radius: int) -> np.ndarray:
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    return taps / taps.sum()


def _gradient_energy(x: np.ndarray) -> float:
    return float(np.sum(np.diff(x, axis=0) ** 2) + np.sum(np.diff(x, axis=1) ** 2))


def _energy_ratio_curve(radius: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient energy ratio of a blurred step before and after the re-blur, per gaussian width."""
    reblur = _gaussian_taps(REBLUR_SIGMA, REBLUR_RADIUS)
    sigmas = np.arange(1, 20 * radius + 1) / 20.0
    ratios = np.array([np.sum(_gaussian_taps(sigma, radius) ** 2)
                       / np.sum(np.convolve(_gaussian_taps(sigma, radius), reblur) ** 2) for sigma in sigmas])
    # truncation can bend the curve up at the widest sigmas
    return sigmas, np.minimum.accumulate(ratios)


def noise_level(img: GridLike, cfg: RestorationConfig) -> float:
    """Configured noise sigma, or the wavelet (median absolute deviation) estimate."""
    if cfg.noise_sigma is not None:
        return cfg.noise_sigma
    return float(estimate_sigma(as_pixels(img)))


def _check_blind_input(x: np.ndarray, cfg: RestorationConfig) -> bool:
    """False when the image is constant and the caller should fall back to the identity kernel."""
    size = cfg.kernel_size
    if x.shape[0] <= 4 * size or x.shape[1] <= 4 * size:
        raise InvalidGridError(f'Image {x.shape} too small for a {size}x{size} blind kernel estimate')
    if np.ptp(x) == 0:
        if cfg.strict:
            raise DegenerateImageError('Zero-variance image, blur is unobservable')
        log.warning('Zero-variance image: using the identity kernel')
        return False
    return True


def _gaussian_width(x: np.ndarray, radius: int, sigma_noise: float) -> float:
    reblur = _gaussian_taps(REBLUR_SIGMA, REBLUR_RADIUS)
    reblurred = ndimage.correlate1d(ndimage.correlate1d(x, reblur, axis=0, mode='nearest'),
                                    reblur, axis=1, mode='nearest')
    margin = radius + REBLUR_RADIUS + 1
    inner = (slice(margin, -margin), slice(margin, -margin))
    sharp_energy = _gradient_energy(x[inner])
    blurred_energy = _gradient_energy(reblurred[inner])

    rows, cols = x[inner].shape
    differences = (rows - 1) * cols + rows * (cols - 1)
    sharp_noise = 2.0 * sigma_noise ** 2 * differences
    blurred_noise = (sigma_noise ** 2 * differences
                     * np.sum(np.diff(np.pad(reblur, 1)) ** 2) * np.sum(reblur ** 2))
    if sharp_energy - sharp_noise <= NOISE_DOMINATED * sharp_energy or blurred_energy - blurred_noise <= 0:
        log.debug('Gradient energy is noise dominated, assuming no blur')
        return 0.0

    measured = (sharp_energy - sharp_noise) / (blurred_energy - blurred_noise)
    sigmas, ratios = _energy_ratio_curve(radius)
    width = float(np.interp(measured, ratios[::-1], sigmas[::-1]))
    log.debug('Gradient energy ratio %.4f, gaussian width %.3f', measured, width)
    return width


def _fit_kernel(x: np.ndarray, cfg: RestorationConfig, sigma_noise: float) -> np.ndarray:
    size = cfg.kernel_size
    radius = size // 2
    if not _check_blind_input(x, cfg):
        return _delta(size)
    width = _gaussian_width(x, radius, sigma_noise)
    if width < SHARP_SIGMA:
        return _delta(size)
    if width >= radius:
        log.warning('Blur wider than the %dx%d kernel window, clamping the estimate', size, size)
    return make_gaussian_psf(width, radius).weights.copy()


def _positive(x: np.ndarray) -> Tuple[np.ndarray, float]:
    # RL needs a positive observation; a constant offset commutes with a normalized blur
    offset = -x.min() + 0.05 * np.ptp(x) if x.min() <= 0 else 0.0
    return x + offset, offset


def _richardson_lucy(observed: np.ndarray, kernel: np.ndarray, latent: np.ndarray, iterations: int) -> np.ndarray:
    flipped = kernel[::-1, ::-1]
    for _ in range(iterations):
        estimate = signal.fftconvolve(latent, kernel, mode='same')
        latent = latent * signal.fftconvolve(observed / np.maximum(estimate, RL_FLOOR), flipped, mode='same')
    return latent


def _refine(observed: np.ndarray, kernel: np.ndarray, cfg: RestorationConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Alternating Richardson-Lucy updates of kernel and latent image, starting from ``kernel``."""
    size = cfg.kernel_size
    latent = observed.copy()
    for _ in range(cfg.blind_iters):
        for _ in range(cfg.rl_inner_iters):
            estimate = signal.fftconvolve(latent, kernel, mode='same')
            ratio = observed / np.maximum(estimate, RL_FLOOR)
            kernel = _project(kernel * _kernel_lags(ratio, latent, size) / latent.sum())
        latent = _richardson_lucy(observed, kernel, latent, cfg.rl_inner_iters)
        kernel = _recenter(kernel)
    return kernel, latent


def _blind(x: np.ndarray, cfg: RestorationConfig, sigma_noise: float) -> Tuple[Psf, np.ndarray]:
    size = cfg.kernel_size
    kernel = _fit_kernel(x, cfg, sigma_noise)
    if is_identity_kernel(Psf(kernel)):
        return Psf(kernel), x

    positive, offset = _positive(x)
    observed = np.pad(positive, size, mode='reflect')
    if cfg.refine_kernel:
        kernel, latent = _refine(observed, kernel, cfg)
        latent = _richardson_lucy(observed, kernel, latent, cfg.rl_inner_iters)
    else:
        latent = _richardson_lucy(observed, kernel, observed.copy(), cfg.blind_iters * cfg.rl_inner_iters)
    log.debug('Blind kernel estimate: center weight %.4f', kernel[size // 2, size // 2])
    return Psf.normalized(kernel), latent[size:-size, size:-size] - offset


def estimate_kernel_blind(img: GridLike, cfg: RestorationConfig) -> Psf:
    """Centered blur kernel of the channel, estimated from the image alone."""
    x = as_pixels(img)
    if cfg.refine_kernel:
        return blind_deconvolve(x, cfg)[0]
    return Psf(_fit_kernel(x, cfg, noise_level(x, cfg)))


def blind_deconvolve(img: GridLike, cfg: RestorationConfig) -> Tuple[Psf, ImageGrid]:
    """Kernel estimate and the Richardson-Lucy latent image it explains."""
    x = as_pixels(img)
    kernel, latent = _blind(x, cfg, noise_level(x, cfg))
    return kernel, ImageGrid(latent)


def _otf(psf: Psf, shape: Tuple[int, int]) -> np.ndarray:
    padded = np.zeros(shape)
    padded[:psf.height, :psf.width] = psf.weights
    origin = ((psf.height - 1) // 2, (psf.width - 1) // 2)
    return np.fft.fft2(np.roll(padded, (-origin[0], -origin[1]), axis=(0, 1)))


def _inverse_filter(psf: Psf, shape: Tuple[int, int], reg: float) -> np.ndarray:
    if reg < 0:
        raise ValueError(f'Deconvolution regularization must be >= 0, got {reg}')
    kernel_f = _otf(psf, shape)
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    gradient_f = (2 - 2 * np.cos(2 * np.pi * fy)) + (2 - 2 * np.cos(2 * np.pi * fx))
    if reg == 0 and np.min(np.abs(kernel_f) ** 2) < 1e-12:
        raise NumericalError('Kernel has spectral zeros, deconvolution needs reg > 0')
    return np.conj(kernel_f) / (np.abs(kernel_f) ** 2 + reg * gradient_f)


def _padded_shape(shape: Tuple[int, int], psf: Psf) -> Tuple[int, int]:
    pad = max(psf.shape)
    return shape[0] + 2 * pad, shape[1] + 2 * pad


def deconvolve(img: GridLike, psf: Psf, reg: float) -> ImageGrid:
    """argmin ‖K∗X − Y‖² + reg·‖∇X‖², solved per frequency on an edge-tapered periodic extension."""
    x = as_pixels(img)
    pad = max(psf.shape)
    # ramps to the image mean on both sides, so the periodic extension is continuous
    padded = np.pad(x, pad, mode='linear_ramp', end_values=float(x.mean()))
    restored = np.real(np.fft.ifft2(_inverse_filter(psf, padded.shape, reg) * np.fft.fft2(padded)))
    return ImageGrid(restored[pad:pad + x.shape[0], pad:pad + x.shape[1]])


def deconvolution_noise_gain(psf: Psf, shape: Tuple[int, int], reg: float) -> float:
    """Standard deviation of white unit noise after ``deconvolve`` on an image of ``shape``."""
    inverse = _inverse_filter(psf, _padded_shape(shape, psf), reg)
    return float(np.sqrt(np.mean(np.abs(inverse) ** 2)))


def nlm_denoise(img: GridLike, cfg: RestorationConfig, sigma: Optional[float] = None) -> ImageGrid:
    """Non-local means with h = nlm_strength·sigma; ``sigma`` overrides the configured or estimated noise."""
    x = as_pixels(img)
    if cfg.nlm_patch > min(x.shape) or 2 * cfg.nlm_search + 1 > min(x.shape):
        raise InvalidGridError(f'NLM windows (patch {cfg.nlm_patch}, search {cfg.nlm_search}) do not fit {x.shape}')
    if sigma is None:
        sigma = noise_level(x, cfg)
    if sigma <= 0:
        log.debug('Noise sigma is zero, skipping non-local means')
        return ImageGrid(x)
    denoised = denoise_nl_means(x, patch_size=cfg.nlm_patch, patch_distance=cfg.nlm_search,
                                h=cfg.nlm_strength * sigma, sigma=sigma, fast_mode=False)
    # weights form a convex combination
    return ImageGrid(np.clip(denoised, x.min(), x.max()))


def _restore(img: GridLike, cfg: RestorationConfig) -> Tuple[ImageGrid, Psf]:
    x = as_pixels(img)
    if not cfg.strict and np.ptp(x) == 0:
        log.warning('Zero-variance channel passed through unrestored')
        return ImageGrid(x), identity_psf()
    sigma = noise_level(x, cfg)
    if cfg.refine_kernel:
        kernel, _ = _blind(x, cfg, sigma)
    else:
        kernel = Psf(_fit_kernel(x, cfg, sigma))
    if is_identity_kernel(kernel):
        return nlm_denoise(x, cfg, sigma), kernel
    sharpened = deconvolve(x, kernel, cfg.deconv_reg)
    # deconvolution colours and amplifies the noise; NLM sees its propagated level
    amplified = sigma * deconvolution_noise_gain(kernel, x.shape, cfg.deconv_reg)
    log.debug('Noise sigma %.4g before deconvolution, %.4g after', sigma, amplified)
    return nlm_denoise(sharpened, cfg, amplified), kernel


def restore_channel(img: GridLike, cfg: RestorationConfig) -> ImageGrid:
    """Blind kernel estimate, then deconvolution, then non-local means."""
    restored, _ = _restore(img, cfg)
    return restored


def restore_cube(cube: HyperCube, cfg: RestorationConfig, workers: int = 1,
                 kernel_dir: Optional[str] = None) -> HyperCube:
    """Restores every band; estimated kernels are dumped as CSV grids into ``kernel_dir`` if given."""
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda band: _restore(band, cfg), cube.bands))
    if kernel_dir is not None:
        for meta, (_, kernel) in zip(cube.band_meta, results):
            save_psf_csv(kernel, os.path.join(kernel_dir, f'kernel_{meta.index:03d}.csv'))
    return cube.with_bands([restored for restored, _ in results])
