"""MAP reconstruction of the high-resolution pseudo-pan from keystone-shifted channels.

Minimizes Σ_k ‖Y_k − S_k D M_k B_k X‖² + λ·R(X) by steepest descent with an
adaptive learning rate: +5 % after a cost decrease, −5 % (and the step undone)
after an increase, stop once the relative change stays under 1 % for three
accepted iterations.
"""
import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ._types import GridLike, ImageGrid, InvalidGridError, InvalidSpecError, NumericalError, as_pixels
from .operators import ChannelModel, _upsample
from .priors import BtvConfig, BtvPrior, Regularizer, compute_rmap

log = logging.getLogger(__name__)

Channel = Tuple[GridLike, ChannelModel]


class Norm(Enum):
    L2 = 'L2'
    L1 = 'L1'


class PriorKind(Enum):
    BTV = 'BTV'
    RBTV = 'RBTV'


@dataclass(frozen=True)
class SolverConfig:
    lambda_: float = 0.015
    beta0: float = 0.8
    btv: BtvConfig = field(default_factory=BtvConfig)
    scale: int = 2
    max_iters: int = 30
    fidelity_norm: Norm = Norm.L2
    prior: PriorKind = PriorKind.RBTV
    rate_up: float = 1.05
    rate_down: float = 0.95
    conv_tol: float = 0.01
    conv_patience: int = 3
    revert_on_increase: bool = True
    rmap_window: int = 2
    recompute_weights: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.lambda_ < 0:
            raise InvalidSpecError(f'lambda must be >= 0, got {self.lambda_}')
        if not self.beta0 > 0:
            raise InvalidSpecError(f'beta0 must be > 0, got {self.beta0}')
        if self.scale < 1:
            raise InvalidSpecError(f'scale must be >= 1, got {self.scale}')
        if self.max_iters < 0 or self.conv_patience < 1:
            raise InvalidSpecError('max_iters must be >= 0 and conv_patience >= 1')
        if not (0 < self.rate_down < 1 < self.rate_up):
            raise InvalidSpecError(f'Need 0 < rate_down < 1 < rate_up, got {self.rate_down}, {self.rate_up}')
        if self.workers < 1:
            raise InvalidSpecError(f'workers must be >= 1, got {self.workers}')


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    total: float
    data: float
    prior: float
    beta: float
    accepted: bool


class CostTrace:
    def __init__(self):
        self._records: List[TraceRecord] = []

    def append(self, record: TraceRecord):
        self._records.append(record)

    @property
    def records(self) -> Tuple[TraceRecord, ...]:
        return tuple(self._records)

    def accepted_costs(self) -> List[float]:
        return [record.total for record in self._records if record.accepted]

    def __len__(self):
        return len(self._records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self._records)

    def __getitem__(self, index) -> TraceRecord:
        return self._records[index]


class StepSchedule:
    """Adaptive learning rate and convergence rule.

    ``count_rejected`` lets cost increases take part in the convergence streak,
    for the mode where increasing steps are kept.
    """

    def __init__(self, beta0: float, rate_up: float = 1.05, rate_down: float = 0.95,
                 tol: float = 0.01, patience: int = 3, count_rejected: bool = False):
        self.beta = beta0
        self._rate_up = rate_up
        self._rate_down = rate_down
        self._tol = tol
        self._patience = patience
        self._count_rejected = count_rejected
        self._streak = 0

    @classmethod
    def from_config(cls, cfg: SolverConfig) -> 'StepSchedule':
        return cls(cfg.beta0, cfg.rate_up, cfg.rate_down, cfg.conv_tol, cfg.conv_patience,
                   count_rejected=not cfg.revert_on_increase)

    def update(self, previous: float, current: float) -> bool:
        """Adapts beta to the cost change and returns whether the step is accepted."""
        accepted = current < previous
        relative = abs(previous - current) / previous if previous > 0 else 0.0
        if accepted or self._count_rejected:
            self._streak = self._streak + 1 if relative < self._tol else 0
        else:
            self._streak = 0
        self.beta *= self._rate_up if accepted else self._rate_down
        return accepted

    @property
    def converged(self) -> bool:
        return self._streak >= self._patience


def _map(function: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(function, items))


def _prepare(x: GridLike, channels: Sequence[Channel]) -> Tuple[np.ndarray, List[Tuple[np.ndarray, ChannelModel]]]:
    if not channels:
        raise InvalidGridError('At least one channel is required')
    x = as_pixels(x)
    prepared = []
    for observed, model in channels:
        observed = as_pixels(observed)
        if observed.shape != model.lr_shape:
            raise InvalidGridError(f'Channel {model.band}: observation {observed.shape} != model {model.lr_shape}')
        if x.shape != model.hr_shape:
            raise InvalidGridError(f'Channel {model.band}: HR estimate {x.shape} != model {model.hr_shape}')
        prepared.append((observed, model))
    return x, prepared


class _Problem:
    """Cost and gradient of one reconstruction, over validated arrays."""

    def __init__(self, channels: List[Tuple[np.ndarray, ChannelModel]], cfg: SolverConfig, prior: Regularizer):
        self.channels = channels
        self.cfg = cfg
        self.prior = prior

    def residuals(self, x: np.ndarray) -> List[np.ndarray]:
        return _map(lambda channel: channel[0] - channel[1].apply(x), self.channels, self.cfg.workers)

    def cost(self, x: np.ndarray) -> Tuple[float, float, float]:
        if self.cfg.fidelity_norm is Norm.L2:
            data = sum(float(np.sum(residual ** 2)) for residual in self.residuals(x))
        else:
            data = sum(float(np.sum(np.abs(residual))) for residual in self.residuals(x))
        prior = self.cfg.lambda_ * self.prior.cost(x) if self.cfg.lambda_ else 0.0
        return data + prior, data, prior

    def gradient(self, x: np.ndarray) -> np.ndarray:
        if self.cfg.fidelity_norm is Norm.L2:
            back = [-2.0 * residual for residual in self.residuals(x)]
        else:
            back = [-np.sign(residual) for residual in self.residuals(x)]
        pairs = list(zip(back, (model for _, model in self.channels)))
        projected = _map(lambda pair: pair[1].apply_adjoint(pair[0]), pairs, self.cfg.workers)
        gradient = np.zeros_like(x)
        for term in projected:
            gradient += term
        if self.cfg.lambda_:
            gradient += self.cfg.lambda_ * self.prior.gradient(x)
        return gradient


def _default_prior(cfg: SolverConfig, x0: np.ndarray) -> Regularizer:
    if cfg.prior is PriorKind.RBTV:
        return BtvPrior(cfg.btv, compute_rmap(x0, cfg.rmap_window).w)
    return BtvPrior(cfg.btv)


def total_cost(x: GridLike, channels: Sequence[Channel], cfg: SolverConfig,
               w: Optional[GridLike] = None, prior: Optional[Regularizer] = None) -> Tuple[float, float, float]:
    """(total, data, prior) of the reconstruction cost. Without ``prior`` the BTV term uses weights ``w``."""
    x, prepared = _prepare(x, channels)
    return _Problem(prepared, cfg, prior or BtvPrior(cfg.btv, w)).cost(x)


def descent_direction(x: GridLike, channels: Sequence[Channel], cfg: SolverConfig,
                      w: Optional[GridLike] = None, prior: Optional[Regularizer] = None) -> ImageGrid:
    """Gradient of ``total_cost`` with respect to x; the update subtracts it."""
    x, prepared = _prepare(x, channels)
    return ImageGrid(_Problem(prepared, cfg, prior or BtvPrior(cfg.btv, w)).gradient(x))


def reference_channel(channels: Sequence[Channel]) -> int:
    """Position of the first channel without keystone shifts, else the middle one."""
    for position, (_, model) in enumerate(channels):
        dx, dy = model.shifts
        if not (np.any(dx) or np.any(dy)):
            return position
    return len(channels) // 2


def initial_estimate(channels: Sequence[Channel], reference: Optional[int] = None) -> ImageGrid:
    """Bicubic upsampling of the reference channel, divided by its spectral coefficients first."""
    if not channels:
        raise InvalidGridError('At least one channel is required')
    if reference is None:
        reference = reference_channel(channels)
    observed, model = channels[reference]
    return ImageGrid(_upsample(as_pixels(observed) / model.coeffs, model.scale, order=3))


def super_resolve(channels: Sequence[Channel], cfg: SolverConfig, x0: Optional[GridLike] = None,
                  prior: Optional[Regularizer] = None,
                  reference: Optional[int] = None) -> Tuple[ImageGrid, CostTrace]:
    if x0 is None:
        x0 = initial_estimate(channels, reference)
    x, prepared = _prepare(x0, channels)
    x = x.copy()
    reweight = prior is None and cfg.prior is PriorKind.RBTV and cfg.recompute_weights
    problem = _Problem(prepared, cfg, prior or _default_prior(cfg, x))

    schedule = StepSchedule.from_config(cfg)
    trace = CostTrace()
    cost = problem.cost(x)
    if not np.isfinite(cost[0]):
        raise NumericalError(f'Initial cost is not finite ({cost[0]})')
    log.debug('Initial cost %.6g (data %.6g, prior %.6g)', *cost)

    gradient = None
    for iteration in range(1, cfg.max_iters + 1):
        if gradient is None:
            gradient = problem.gradient(x)
        beta = schedule.beta
        candidate = x - beta * gradient
        candidate_cost = problem.cost(candidate)
        if not np.isfinite(candidate_cost[0]):
            raise NumericalError(f'Cost became non-finite at iteration {iteration}')

        accepted = schedule.update(cost[0], candidate_cost[0])
        trace.append(TraceRecord(iteration, *candidate_cost, beta, accepted))
        log.debug('Iteration %d: cost %.6g, beta %.4g, %s', iteration, candidate_cost[0], beta,
                  'accepted' if accepted else 'rejected')

        if accepted or not cfg.revert_on_increase:
            x, cost, gradient = candidate, candidate_cost, None
            if reweight:
                problem.prior = _default_prior(cfg, x)
                cost = problem.cost(x)
        if schedule.converged:
            log.debug('Converged after %d iterations', iteration)
            break

    log.info('Super-resolution finished: %d iterations, final cost %.6g', len(trace), cost[0])
    return ImageGrid(x), trace


def save_trace_csv(trace: CostTrace, path: str) -> None:
    with open(path, 'w', newline='') as table:
        writer = csv.writer(table, lineterminator='\n')
        writer.writerow(['iteration', 'total', 'data', 'prior', 'beta', 'accepted'])
        for record in trace:
            writer.writerow([record.iteration, repr(record.total), repr(record.data), repr(record.prior),
                             repr(record.beta), int(record.accepted)])
