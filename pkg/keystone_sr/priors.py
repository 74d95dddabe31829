"""Bilateral total variation prior with Rmap edge-adaptive weights."""
from dataclasses import dataclass
from typing import List, Optional, Protocol, Tuple

import numpy as np
from scipy import ndimage

from ._types import GridLike, ImageGrid, InvalidGridError, InvalidSpecError, as_pixels

RMAP_EXPONENT = 0.8
RMAP_FLOOR = 0.5


@dataclass(frozen=True)
class BtvConfig:
    P: int = 4
    alpha: float = 0.2

    def __post_init__(self):
        if self.P < 1:
            raise InvalidSpecError(f'BTV window radius P must be >= 1, got {self.P}')
        if not 0 < self.alpha < 1:
            raise InvalidSpecError(f'BTV alpha must be in (0, 1), got {self.alpha}')


@dataclass(frozen=True)
class RmapField:
    r: ImageGrid
    w: ImageGrid


class Regularizer(Protocol):
    def cost(self, x: np.ndarray) -> float:
        raise NotImplementedError()

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError()


def shift_set(cfg: BtvConfig) -> List[Tuple[int, int, float]]:
    """(l, m, α^{|l|+|m|}) over the half plane m > 0 or (m == 0 and l > 0); l is horizontal."""
    return [(l, m, cfg.alpha ** (abs(l) + abs(m)))
            for m in range(0, cfg.P + 1)
            for l in range(-cfg.P, cfg.P + 1)
            if m > 0 or l > 0]


def _shift_index(shape: Tuple[int, int], l: int, m: int) -> np.ndarray:
    """Flat source index of x shifted by l columns and m rows, edge replicated."""
    rows, cols = shape
    source_rows = np.clip(np.arange(rows) + m, 0, rows - 1)
    source_cols = np.clip(np.arange(cols) + l, 0, cols - 1)
    return source_rows[:, None] * cols + source_cols[None, :]


def _weights(x: np.ndarray, w) -> np.ndarray:
    if w is None:
        return np.ones_like(x)
    weights = as_pixels(w)
    if weights.shape != x.shape:
        raise InvalidGridError(f'Weights {weights.shape} do not match image {x.shape}')
    return weights


def _btv_cost(x: np.ndarray, cfg: BtvConfig, weights: np.ndarray) -> float:
    flat = x.ravel()
    total = 0.0
    for l, m, decay in shift_set(cfg):
        total += decay * float(np.sum(weights * np.abs(x - flat[_shift_index(x.shape, l, m)])))
    return total


def _btv_gradient(x: np.ndarray, cfg: BtvConfig, weights: np.ndarray) -> np.ndarray:
    flat = x.ravel()
    gradient = np.zeros(x.size)
    for l, m, decay in shift_set(cfg):
        index = _shift_index(x.shape, l, m)
        weighted_sign = (weights * np.sign(x - flat[index])).ravel()
        # d/dx of w|x - Sx| = w·sign - Sᵀ(w·sign)
        gradient += decay * (weighted_sign - np.bincount(index.ravel(), weights=weighted_sign, minlength=x.size))
    return gradient.reshape(x.shape)


def btv_cost(x: GridLike, cfg: BtvConfig, w: Optional[GridLike] = None) -> float:
    x = as_pixels(x)
    return _btv_cost(x, cfg, _weights(x, w))


def btv_subgradient(x: GridLike, cfg: BtvConfig, w: Optional[GridLike] = None) -> ImageGrid:
    x = as_pixels(x)
    return ImageGrid(_btv_gradient(x, cfg, _weights(x, w)))


def central_gradients(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    padded = np.pad(x, 1, mode='edge')
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2
    return gy, gx


def compute_rmap(img: GridLike, window: int = 2) -> RmapField:
    """r(i) = ‖Σ_j ∇I(j)‖² / (Σ_j ‖∇I(j)‖² + 0.5) over a (2·window+1)² neighbourhood; w = exp(−r^0.8)."""
    if window < 1:
        raise ValueError(f'Rmap window radius must be >= 1, got {window}')
    x = as_pixels(img)
    gy, gx = central_gradients(x)
    box = np.ones((2 * window + 1, 2 * window + 1))
    sum_gy = ndimage.correlate(gy, box, mode='nearest')
    sum_gx = ndimage.correlate(gx, box, mode='nearest')
    energy = ndimage.correlate(gy ** 2 + gx ** 2, box, mode='nearest')
    r = (sum_gy ** 2 + sum_gx ** 2) / (energy + RMAP_FLOOR)
    return RmapField(ImageGrid(r), ImageGrid(np.exp(-np.abs(r) ** RMAP_EXPONENT)))


class BtvPrior:
    """BTV (``weights`` unset) or Rmap-weighted BTV as a solver regularizer."""

    def __init__(self, cfg: BtvConfig, weights: Optional[GridLike] = None):
        self.cfg = cfg
        self.weights = None if weights is None else as_pixels(weights)

    def cost(self, x: np.ndarray) -> float:
        return _btv_cost(x, self.cfg, _weights(x, self.weights))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return _btv_gradient(x, self.cfg, _weights(x, self.weights))


TV_EPSILON = 1e-8


def _forward_differences(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # last row / column difference is zero under edge replication
    gy = np.zeros_like(x)
    gx = np.zeros_like(x)
    gy[:-1] = x[1:] - x[:-1]
    gx[:, :-1] = x[:, 1:] - x[:, :-1]
    return gy, gx


def _forward_differences_adjoint(py: np.ndarray, px: np.ndarray) -> np.ndarray:
    py = py.copy()
    px = px.copy()
    py[-1] = 0
    px[:, -1] = 0
    out = -py - px
    out[1:] += py[:-1]
    out[:, 1:] += px[:, :-1]
    return out


class TvPrior:
    """Isotropic total variation Σ sqrt(|∇x|² + ε) on forward differences."""

    def __init__(self, epsilon: float = TV_EPSILON):
        if not epsilon > 0:
            raise InvalidSpecError(f'TV epsilon must be > 0, got {epsilon}')
        self.epsilon = epsilon

    def cost(self, x: np.ndarray) -> float:
        gy, gx = _forward_differences(x)
        return float(np.sum(np.sqrt(gy ** 2 + gx ** 2 + self.epsilon)))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        gy, gx = _forward_differences(x)
        magnitude = np.sqrt(gy ** 2 + gx ** 2 + self.epsilon)
        return _forward_differences_adjoint(gy / magnitude, gx / magnitude)
