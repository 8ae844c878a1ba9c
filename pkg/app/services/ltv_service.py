"""Windowed variational estimation of a time-varying FIR under a GP temporal prior"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.config import settings as runtime_settings
from app.errors import DimensionMismatchError, InvalidArgumentError, PlanCoverageError
from app.models import DiagGaussian, Fir, Signal, TimeVaryingIR
from app.schemas import LtvSettings, TrainConfig, WindowPlanSpec
from app.services import signal_service
from app.services.gp_service import GPWindowPrior
from app.services.lti_service import input_signal
from app.services.seeding import derive_seed, make_rng
from app.services.variational_service import (
    ElboResult,
    WindowConvolutionModel,
    adam_cosine_fit,
    elbo_terms,
)

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class InterpolationSchedule:
    base_firs: Tuple[Fir, Fir, Fir]
    weights: np.ndarray  # (n, 3)

    def __post_init__(self):
        if len(self.base_firs) != 3:
            raise InvalidArgumentError("exactly three base FIRs are required")
        if len({h.p for h in self.base_firs}) != 1:
            raise DimensionMismatchError("base FIRs must share one length")
        weights = np.asarray(self.weights, dtype=float)
        if weights.ndim != 2 or weights.shape[1] != 3 or weights.shape[0] < 1:
            raise DimensionMismatchError(f"weights must be (n, 3), got {weights.shape}")
        if np.any(weights < -ROW_SUM_TOL) or np.any(weights > 1.0 + ROW_SUM_TOL):
            raise InvalidArgumentError("interpolation weights must lie in [0, 1]")
        if np.max(np.abs(weights.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
            raise InvalidArgumentError("interpolation weights must sum to 1 per row")
        object.__setattr__(self, "base_firs", tuple(self.base_firs))
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.weights.shape[0]


def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def smoothstep_schedule(n: int, base_firs: Sequence[Fir],
                        transitions=((0.3, 0.4), (0.6, 0.7))) -> InterpolationSchedule:
    """Regime 1 -> 2 over the first transition, 2 -> 3 over the second (fractions of n)."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    (a0, a1), (b0, b1) = transitions
    t = np.arange(n) / n
    s1 = _smoothstep((t - a0) / (a1 - a0))
    s2 = _smoothstep((t - b0) / (b1 - b0))
    weights = np.column_stack([1.0 - s1, s1 - s2, s2])
    return InterpolationSchedule(tuple(base_firs), weights)


def default_base_firs(p: int, seed: int) -> Tuple[Fir, Fir, Fir]:
    """Three unit-energy decaying FIRs: random, oscillating and delayed-peak."""
    rng = make_rng(seed)
    k = np.arange(p, dtype=float)
    envelope = np.exp(-k / max(1.0, p / 3.0))
    random_taps = envelope * rng.standard_normal(p)
    oscillating = envelope * np.cos(np.pi * k / 2.0 + rng.uniform(0.0, 2 * np.pi))
    delayed = np.exp(-0.5 * ((k - p / 2.0) / max(1.0, p / 6.0)) ** 2) * rng.choice([-1.0, 1.0], size=p)
    return tuple(Fir(h / np.linalg.norm(h)) for h in (random_taps, oscillating, delayed))


def gen_ltv_ground_truth(sched: InterpolationSchedule, sample_rate: float = 1.0) -> TimeVaryingIR:
    bases = np.stack([h.taps for h in sched.base_firs])
    return TimeVaryingIR(sched.weights @ bases, sample_rate=sample_rate)


@dataclass(frozen=True)
class WindowPlan:
    n: int
    window: int
    stride: int
    starts: Tuple[int, ...]

    @classmethod
    def build(cls, n: int, window: int, stride: Optional[int] = None) -> "WindowPlan":
        """Starts 0, stride, 2 stride, ...; a final window ending at n closes any gap."""
        stride = stride if stride is not None else max(1, window // 2)
        if not 1 <= stride <= window:
            raise InvalidArgumentError(f"stride must be in [1, {window}], got {stride}")
        if not 1 <= window <= n:
            raise InvalidArgumentError(f"window must be in [1, {n}], got {window}")
        starts = list(range(0, n - window + 1, stride))
        if starts[-1] != n - window:
            starts.append(n - window)
        return cls(n, window, stride, tuple(starts))

    @classmethod
    def from_spec(cls, n: int, spec: WindowPlanSpec) -> "WindowPlan":
        return cls.build(n, spec.window, spec.effective_stride)

    def __len__(self) -> int:
        return len(self.starts)

    def coverage_counts(self) -> np.ndarray:
        counts = np.zeros(self.n, dtype=int)
        for start in self.starts:
            counts[start:start + self.window] += 1
        return counts


def _fit_window(index: int, start: int, lags: np.ndarray, g: np.ndarray, prior: GPWindowPrior,
                cfg: TrainConfig) -> DiagGaussian:
    W = prior.window
    model = WindowConvolutionModel(lags[start:start + W], g[start:start + W], cfg.reduction)
    rng = make_rng(derive_seed(cfg.seed, index))

    # the optimizer moves whitened means z with mean = L z per tap
    def objective(qz: DiagGaussian, step: int) -> ElboResult:
        q = DiagGaussian(prior.color(qz.mean), qz.log_std)
        res = elbo_terms(model, prior, q, rng.standard_normal((cfg.batch_replicas, prior.dim)), cfg.beta)
        return res._replace(grad_mean=prior.color_gradient(res.grad_mean))

    qz = adam_cosine_fit(objective, DiagGaussian.initial(prior.dim, cfg.log_std_init), cfg)
    logger.debug("window %d (start %d) fitted", index, start)
    return DiagGaussian(prior.color(qz.mean), qz.log_std)


def fit_ltv(f: Signal, g: Signal, p: int, plan: WindowPlan, prior: GPWindowPrior, cfg: TrainConfig,
            max_workers: Optional[int] = None) -> List[DiagGaussian]:
    """One diagonal-Gaussian posterior over (W, p) taps per window, in plan order.

    Each window sees the true preceding input samples as context.
    """
    if len(f) != len(g):
        raise DimensionMismatchError(f"input has {len(f)} samples, output {len(g)}")
    if plan.n != len(f):
        raise DimensionMismatchError(f"plan covers {plan.n} samples, signals have {len(f)}")
    if plan.window < p:
        raise InvalidArgumentError(f"window ({plan.window}) shorter than p ({p})")
    if prior.window != plan.window or prior.p != p:
        raise DimensionMismatchError("GP prior shape differs from (window, p)")
    lags = signal_service.lag_matrix(f.samples, p)
    workers = max_workers if max_workers is not None else runtime_settings.MAX_WORKERS
    logger.info("LTV fit: %d windows of %d steps, p=%d, %d workers", len(plan), plan.window, p, workers)
    jobs = list(enumerate(plan.starts))
    if workers <= 1:
        return [_fit_window(i, start, lags, g.samples, prior, cfg) for i, start in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: _fit_window(job[0], job[1], lags, g.samples, prior, cfg), jobs))


def stitch(windows: Sequence[DiagGaussian], plan: WindowPlan, sample_rate: float = 1.0) -> TimeVaryingIR:
    """Average of all covering windows; variance from the mixture moments, floored at 0."""
    if len(windows) != len(plan):
        raise DimensionMismatchError(f"{len(windows)} window posteriors for a plan of {len(plan)}")
    W = plan.window
    p = windows[0].dim // W if windows else 0
    if p < 1 or any(q.dim != W * p for q in windows):
        raise DimensionMismatchError("window posteriors must all have window * p dims")
    first = np.zeros((plan.n, p))
    second = np.zeros((plan.n, p))
    counts = np.zeros(plan.n)
    for q, start in zip(windows, plan.starts):
        mean = q.mean.reshape(W, p)
        first[start:start + W] += mean
        second[start:start + W] += q.std.reshape(W, p) ** 2 + mean ** 2
        counts[start:start + W] += 1
    uncovered = np.flatnonzero(counts == 0)
    if uncovered.size:
        raise PlanCoverageError(f"time index {int(uncovered[0])} is not covered by any window")
    mean = first / counts[:, None]
    var = np.maximum(second / counts[:, None] - mean ** 2, 0.0)
    return TimeVaryingIR(mean, std=np.sqrt(var), sample_rate=sample_rate)


def total_variation(ir) -> float:
    """Sum over taps of absolute row-to-row changes."""
    taps = ir.taps if isinstance(ir, TimeVaryingIR) else np.asarray(ir, dtype=float)
    return float(np.sum(np.abs(np.diff(taps, axis=0))))


def tap_rmse(estimate: TimeVaryingIR, truth: TimeVaryingIR) -> float:
    if estimate.taps.shape != truth.taps.shape:
        raise DimensionMismatchError(f"estimate {estimate.taps.shape} and truth {truth.taps.shape} differ")
    return float(np.sqrt(np.mean((estimate.taps - truth.taps) ** 2)))


@dataclass(frozen=True)
class LtvFixture:
    f: Signal
    g: Signal
    clean: Signal
    truth: TimeVaryingIR


def make_ltv_fixture(settings: LtvSettings, seed: int) -> LtvFixture:
    """Three-regime smoothstep ground truth probed by one input, with additive noise."""
    bases = default_base_firs(settings.p, derive_seed(seed, 0))
    truth = gen_ltv_ground_truth(smoothstep_schedule(settings.n, bases, settings.transitions),
                                 settings.sample_rate)
    f = input_signal(settings.input_kind, settings.n, derive_seed(seed, 1),
                      settings.sample_rate, settings.n_pulses)
    clean = signal_service.convolve_ltv(f, truth)
    g = signal_service.add_white_noise(clean, settings.snr_db, derive_seed(seed, 2))
    return LtvFixture(f, g, clean, truth)
