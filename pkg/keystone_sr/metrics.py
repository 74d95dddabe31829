"""Evaluation: radial power spectra, PSNR, spectral angle and the method comparison harness."""
import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from ._types import GridLike, HyperCube, ImageGrid, InvalidGridError, NumericalError, as_pixels
from .priors import BtvPrior, Regularizer, TvPrior
from .solver import Channel, Norm, PriorKind, SolverConfig, initial_estimate, super_resolve

log = logging.getLogger(__name__)

NYQUIST = 0.5
HIGH_BAND = (0.25, 0.5)
BASELINE = 'bicubic'


@dataclass(frozen=True)
class RadialProfile:
    frequencies: np.ndarray  # bin centers, cycles/pixel
    power: np.ndarray        # mean |F|²/N per annulus
    counts: np.ndarray       # frequency samples per annulus

    @property
    def bin_width(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])

    def __iter__(self):
        return iter(zip(self.frequencies.tolist(), self.power.tolist()))


def radial_power_spectrum(img: GridLike, n_bins: int = 64) -> RadialProfile:
    """Annular mean of |F|²/N of the mean-subtracted image over [0, 0.5] cycles/pixel.

    Nearest-bin assignment on uniformly spaced centers; corner frequencies above
    Nyquist fall into the last bin and the DC sample is left out.
    """
    x = as_pixels(img)
    if x.shape[0] < 2 or x.shape[1] < 2:
        raise InvalidGridError(f'Radial spectrum needs at least a 2x2 image, got {x.shape}')
    if n_bins < 2:
        raise ValueError(f'n_bins must be >= 2, got {n_bins}')

    power = np.abs(np.fft.fft2(x - x.mean())) ** 2 / x.size
    fy = np.fft.fftfreq(x.shape[0])[:, None]
    fx = np.fft.fftfreq(x.shape[1])[None, :]
    radius = np.hypot(fy, fx)

    spacing = NYQUIST / (n_bins - 1)
    index = np.minimum(np.rint(radius / spacing).astype(np.int64), n_bins - 1)
    keep = radius.ravel() > 0
    index = index.ravel()[keep]
    counts = np.bincount(index, minlength=n_bins)
    sums = np.bincount(index, weights=power.ravel()[keep], minlength=n_bins)
    mean = np.divide(sums, counts, out=np.zeros(n_bins), where=counts > 0)
    return RadialProfile(np.arange(n_bins) * spacing, mean, counts)


def band_power(profile: RadialProfile, low: float = HIGH_BAND[0], high: float = HIGH_BAND[1]) -> float:
    """Mean power integrated over bins with centers in [low, high]."""
    inside = (profile.frequencies >= low - 1e-12) & (profile.frequencies <= high + 1e-12)
    return float(np.sum(profile.power[inside]) * profile.bin_width)


def psnr(a: GridLike, b: GridLike, peak: float) -> float:
    a, b = as_pixels(a), as_pixels(b)
    if a.shape != b.shape:
        raise InvalidGridError(f'PSNR of mismatched grids {a.shape} and {b.shape}')
    if not peak > 0:
        raise ValueError(f'Peak must be > 0, got {peak}')
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float('inf')
    return 10 * np.log10(peak ** 2 / mse)


def spectral_angle(cube_a: HyperCube, cube_b: HyperCube) -> ImageGrid:
    """Per-pixel angle in degrees between the band vectors of two cubes."""
    if cube_a.n_bands != cube_b.n_bands or (cube_a.rows, cube_a.cols) != (cube_b.rows, cube_b.cols):
        raise InvalidGridError(f'Spectral angle of mismatched cubes {cube_a!r} and {cube_b!r}')
    if cube_a.n_bands == 0:
        raise InvalidGridError('Spectral angle of empty cubes')
    a, b = cube_a.as_array(), cube_b.as_array()
    norm_a = np.sqrt(np.sum(a ** 2, axis=0))
    norm_b = np.sqrt(np.sum(b ** 2, axis=0))
    if np.any(norm_a == 0) or np.any(norm_b == 0):
        raise NumericalError('Zero spectrum in spectral angle')
    cosine = np.clip(np.sum(a * b, axis=0) / (norm_a * norm_b), -1.0, 1.0)
    return ImageGrid(np.degrees(np.arccos(cosine)))


class MethodPrior(Enum):
    TV = 'TV'
    BTV = 'BTV'
    RBTV = 'RBTV'


@dataclass(frozen=True)
class Method:
    norm: Norm
    prior: MethodPrior

    @property
    def name(self) -> str:
        return f'{self.norm.value}+{self.prior.value}'

    @classmethod
    def parse(cls, text: str) -> 'Method':
        try:
            norm, prior = (part.strip().upper() for part in text.split('+'))
            return cls(Norm(norm), MethodPrior(prior))
        except ValueError:
            raise ValueError(f'Unknown method {text!r}, expected L1|L2 + TV|BTV|RBTV')

    def __str__(self):
        return self.name


ALL_METHODS = tuple(Method(norm, prior) for norm in Norm for prior in MethodPrior)


@dataclass(frozen=True)
class MethodResult:
    name: str
    image: ImageGrid
    profile: RadialProfile
    band_power: float
    psnr: Optional[float]
    iterations: int


@dataclass(frozen=True)
class ComparisonReport:
    baseline: MethodResult
    results: Tuple[MethodResult, ...]
    band: Tuple[float, float]

    def row(self, name: str) -> MethodResult:
        for result in (self.baseline,) + self.results:
            if result.name == name:
                return result
        raise KeyError(name)

    def claim_holds(self, leader: str = 'L2+RBTV') -> Optional[bool]:
        """Whether ``leader`` carries the most high-band power, baseline included; None if it was not run."""
        names = [result.name for result in self.results]
        if leader not in names:
            return None
        best = self.row(leader).band_power
        return all(best >= result.band_power for result in (self.baseline,) + self.results if result.name != leader)

    def profiles(self) -> Dict[str, RadialProfile]:
        return {result.name: result.profile for result in (self.baseline,) + self.results}


def _method_setup(method: Method, cfg: SolverConfig) -> Tuple[SolverConfig, Optional[Regularizer]]:
    if method.prior is MethodPrior.TV:
        return replace(cfg, fidelity_norm=method.norm), TvPrior()
    if method.prior is MethodPrior.BTV:
        return replace(cfg, fidelity_norm=method.norm, prior=PriorKind.BTV), BtvPrior(cfg.btv)
    return replace(cfg, fidelity_norm=method.norm, prior=PriorKind.RBTV), None


def compare_methods(channels: Sequence[Channel], cfg: SolverConfig, methods: Sequence[Method] = ALL_METHODS,
                    truth: Optional[GridLike] = None, n_bins: int = 64, peak: Optional[float] = None,
                    band: Tuple[float, float] = HIGH_BAND, workers: int = 1) -> ComparisonReport:
    """Runs super_resolve per method from a shared bicubic start and scores each output."""
    if not methods:
        raise ValueError('No methods to compare')
    x0 = initial_estimate(channels)
    if truth is not None:
        truth = as_pixels(truth)
        if peak is None:
            peak = float(truth.max())

    def score(name: str, image: ImageGrid, iterations: int) -> MethodResult:
        profile = radial_power_spectrum(image, n_bins)
        quality = psnr(image, truth, peak) if truth is not None else None
        return MethodResult(name, image, profile, band_power(profile, *band), quality, iterations)

    def run(method: Method) -> MethodResult:
        method_cfg, prior = _method_setup(method, cfg)
        image, trace = super_resolve(channels, method_cfg, x0=x0, prior=prior)
        log.info('%s: %d iterations', method.name, len(trace))
        return score(method.name, image, len(trace))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = tuple(pool.map(run, methods))
    return ComparisonReport(score(BASELINE, x0, 0), results, band)


def save_spectrum_csv(profiles: Mapping[str, RadialProfile], path: str) -> None:
    """One frequency column, then one power column per named profile."""
    names = list(profiles)
    if not names:
        raise ValueError('No profiles to write')
    frequencies = profiles[names[0]].frequencies
    with open(path, 'w', newline='') as table:
        writer = csv.writer(table, lineterminator='\n')
        writer.writerow(['frequency'] + names)
        for row, frequency in enumerate(frequencies):
            writer.writerow([repr(float(frequency))] + [repr(float(profiles[name].power[row])) for name in names])


def save_report_csv(report: ComparisonReport, path: str) -> None:
    with open(path, 'w', newline='') as table:
        writer = csv.writer(table, lineterminator='\n')
        writer.writerow(['method', 'psnr', 'band_power', 'iterations'])
        for result in (report.baseline,) + report.results:
            quality = '' if result.psnr is None else repr(float(result.psnr))
            writer.writerow([result.name, quality, repr(result.band_power), result.iterations])


def plot_profiles(profiles: Mapping[str, RadialProfile], path: str,
                  band: Optional[Tuple[float, float]] = HIGH_BAND) -> None:
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, profile in profiles.items():
        # bin 0 holds only near-DC samples
        ax.semilogy(profile.frequencies[1:], np.maximum(profile.power[1:], 1e-12), label=name)
    if band is not None:
        ax.axvspan(*band, color='0.9', zorder=0)
    ax.set_xlabel('frequency (cycles/pixel)')
    ax.set_ylabel('radial power')
    ax.set_xlim(0, NYQUIST)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
