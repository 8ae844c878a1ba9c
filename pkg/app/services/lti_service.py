"""Posterior estimation of a time-invariant FIR and its propagated predictions"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from app.errors import DimensionMismatchError, InvalidArgumentError, NumericalError
from app.models import DiagGaussian, Fir, LagSeries, PosteriorIR, Signal
from app.schemas import LtiFitRecord, LtiSettings, TrainConfig
from app.services import signal_service
from app.services.seeding import derive_seed, make_rng
from app.services.variational_service import (
    ConvolutionModel,
    IsotropicPrior,
    adam_cosine_fit,
    elbo_terms,
    sample,
)

logger = logging.getLogger(__name__)

Pair = Tuple[Signal, Signal]
TRACE_POINTS = 200
BAND_PERCENTILES = (2.5, 97.5)


@dataclass(frozen=True)
class LtiFit:
    posterior: DiagGaussian
    train_trace: np.ndarray
    config: TrainConfig
    sample_rate: float = 1.0
    # set when restored from a record, whose trace is downsampled
    stored_final_loss: Optional[float] = None

    @property
    def p(self) -> int:
        return self.posterior.dim

    @property
    def final_loss(self) -> float:
        if self.stored_final_loss is not None:
            return self.stored_final_loss
        return float(self.train_trace[-1])

    def mean_fir(self) -> Fir:
        return Fir(self.posterior.mean)

    def posterior_ir(self) -> PosteriorIR:
        return PosteriorIR(self.posterior.mean, std=self.posterior.std)

    def to_record(self) -> LtiFitRecord:
        stride = max(1, math.ceil(self.train_trace.size / TRACE_POINTS))
        return LtiFitRecord(
            p=self.p,
            mean=self.posterior.mean.tolist(),
            std=self.posterior.std.tolist(),
            config=self.config,
            final_loss=self.final_loss,
            trace_downsampled=self.train_trace[::stride].tolist(),
            sample_rate=self.sample_rate,
        )

    @classmethod
    def from_record(cls, record: LtiFitRecord) -> "LtiFit":
        posterior = DiagGaussian(record.mean, np.log(np.asarray(record.std)))
        return cls(posterior, np.asarray(record.trace_downsampled), record.config, record.sample_rate,
                   stored_final_loss=record.final_loss)


@dataclass(frozen=True)
class SampleBand:
    """Pointwise statistics of a stack of sampled curves over a shared axis."""
    axis: np.ndarray
    samples: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_samples(cls, axis: np.ndarray, samples: np.ndarray) -> "SampleBand":
        lower, upper = np.percentile(samples, BAND_PERCENTILES, axis=0)
        return cls(np.asarray(axis), samples, samples.mean(axis=0), samples.std(axis=0), lower, upper)

    @property
    def gaussian_lower(self) -> np.ndarray:
        return self.mean - 2.0 * self.std

    @property
    def gaussian_upper(self) -> np.ndarray:
        return self.mean + 2.0 * self.std


@dataclass(frozen=True)
class FrequencyResponseBand:
    magnitude: SampleBand
    phase: SampleBand

    @property
    def frequencies(self) -> np.ndarray:
        return self.magnitude.axis


def _check_pairs(pairs: Sequence[Pair]) -> None:
    if not pairs:
        raise InvalidArgumentError("at least one (f, g) pair is required")
    for i, (f, g) in enumerate(pairs):
        if len(f) != len(g):
            raise DimensionMismatchError(f"pair {i}: input has {len(f)} samples, output {len(g)}")
        if signal_service.signal_power(f) == 0.0:
            raise InvalidArgumentError(f"pair {i}: input signal has zero power")


def fit_lti(pairs: Sequence[Pair], p: int, cfg: TrainConfig) -> LtiFit:
    """Variational posterior over p taps under N(0, I/p), reconstruction summed over pairs."""
    _check_pairs(pairs)
    if p < 1:
        raise InvalidArgumentError(f"p must be >= 1, got {p}")
    model = ConvolutionModel.from_pairs(pairs, p, cfg.reduction)
    prior = IsotropicPrior(1.0 / math.sqrt(p), p)
    rng = make_rng(cfg.seed)

    def objective(q: DiagGaussian, step: int):
        return elbo_terms(model, prior, q, rng.standard_normal((cfg.batch_replicas, p)), cfg.beta)

    trace: List[float] = []
    posterior = adam_cosine_fit(objective, DiagGaussian.initial(p, cfg.log_std_init), cfg,
                                callback=lambda step, loss: trace.append(loss))
    logger.info("LTI fit: %d pairs, p=%d, %d steps, final loss %.6g, mean std %.4g",
                len(pairs), p, cfg.steps, trace[-1], float(posterior.std.mean()))
    return LtiFit(posterior, np.asarray(trace), cfg, pairs[0][0].sample_rate)


def least_squares_fir(pairs: Sequence[Pair], p: int) -> Fir:
    """Normal-equations estimate over all pairs."""
    _check_pairs(pairs)
    model = ConvolutionModel.from_pairs(pairs, p, reduction="sum")
    try:
        return Fir(model.least_squares())
    except linalg.LinAlgError as e:
        raise NumericalError(f"normal equations are singular for p={p}") from e


def posterior_predict(fit: LtiFit, f: Signal, n_samples: int, seed: int) -> SampleBand:
    """Posterior predictive output samples convolve(f, h_i) with pointwise statistics."""
    H = sample(fit.posterior, n_samples, seed)
    X = signal_service.lag_matrix(f.samples, fit.p)
    return SampleBand.from_samples(np.arange(len(f)), H @ X.T)


def _autocorrelation_design(f: Signal, max_lag: int, p: int) -> np.ndarray:
    """(2 max_lag + 1, p) matrix A with A[l, k - 1] = (f x f)[l - k]"""
    acf = signal_service.cross_correlate(f, f, max_lag + p)
    lags = np.arange(-max_lag, max_lag + 1)
    taps = np.arange(1, p + 1)
    return acf.values[(lags[:, None] - taps[None, :]) + max_lag + p]


def posterior_ccf(fit: LtiFit, f: Signal, max_lag: int, n_samples: int, seed: int) -> SampleBand:
    """Per-sample CCF (f x f) * h_i over lags [-max_lag, max_lag]."""
    if max_lag < 0:
        raise InvalidArgumentError(f"max_lag must be >= 0, got {max_lag}")
    A = _autocorrelation_design(f, max_lag, fit.p)
    H = sample(fit.posterior, n_samples, seed)
    return SampleBand.from_samples(np.arange(-max_lag, max_lag + 1), H @ A.T)


def mean_ccf(fit: LtiFit, f: Signal, max_lag: int) -> LagSeries:
    """(f x f) * posterior mean"""
    A = _autocorrelation_design(f, max_lag, fit.p)
    return LagSeries(np.arange(-max_lag, max_lag + 1), A @ fit.posterior.mean, f.sample_rate)


def observed_ccf(f: Signal, g: Signal, max_lag: int) -> LagSeries:
    return signal_service.cross_correlate(f, g, max_lag)


def posterior_frequency_response(fit: LtiFit, n_freqs: int, n_samples: int, seed: int) -> FrequencyResponseBand:
    if n_freqs < fit.p:
        raise InvalidArgumentError(f"n_freqs ({n_freqs}) must be >= p ({fit.p})")
    H = sample(fit.posterior, n_samples, seed)
    freqs, responses = signal_service.frequency_responses(H, n_freqs, fit.sample_rate)
    return FrequencyResponseBand(
        magnitude=SampleBand.from_samples(freqs, np.abs(responses)),
        phase=SampleBand.from_samples(freqs, np.unwrap(np.angle(responses), axis=1)),
    )


def tap_rmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise DimensionMismatchError(f"estimate {estimate.shape} and truth {truth.shape} differ")
    return float(np.sqrt(np.mean((estimate - truth) ** 2)))


def coverage(fit: LtiFit, truth: np.ndarray, k: float = 3.0) -> float:
    """Fraction of true taps inside mean +/- k std."""
    truth = np.asarray(truth, dtype=float)
    if truth.shape != fit.posterior.mean.shape:
        raise DimensionMismatchError("truth and posterior differ in length")
    inside = np.abs(fit.posterior.mean - truth) <= k * fit.posterior.std
    return float(np.mean(inside))


def frequency_band_coverage(band: FrequencyResponseBand, truth: Fir, sample_rate: float = 1.0) -> float:
    """Fraction of frequencies where |H_true| lies inside the sampled magnitude band."""
    magnitude = band.magnitude
    truth_mag = np.abs(signal_service.frequency_response(truth, magnitude.axis.size, sample_rate).values)
    return float(np.mean((truth_mag >= magnitude.lower) & (truth_mag <= magnitude.upper)))


# Fixtures

@dataclass(frozen=True)
class LtiFixture:
    truth: Fir
    pairs: List[Pair]
    clean: List[Signal]


def gen_random_fir(p: int, seed: int) -> Fir:
    """Exponentially decaying random taps scaled to unit energy."""
    if p < 1:
        raise InvalidArgumentError(f"p must be >= 1, got {p}")
    rng = make_rng(seed)
    taps = np.exp(-np.arange(p) / max(1.0, p / 4.0)) * rng.standard_normal(p)
    return Fir(taps / np.linalg.norm(taps))


def input_signal(kind: str, length: int, seed: int, sample_rate: float, n_pulses: int) -> Signal:
    if kind == "pulse":
        return signal_service.gen_pulse_train(length, n_pulses, seed, sample_rate)
    return signal_service.gen_white_noise(length, seed, sample_rate)


def make_lti_fixture(settings: LtiSettings, seed: int) -> LtiFixture:
    """Ground-truth FIR and n_pairs noisy observations."""
    truth = gen_random_fir(settings.p, derive_seed(seed, 0))
    pairs: List[Pair] = []
    clean: List[Signal] = []
    for i in range(settings.n_pairs):
        f = input_signal(settings.input_kind, settings.length, derive_seed(seed, 1, i),
                          settings.sample_rate, settings.n_pulses)
        g_clean = signal_service.convolve(f, truth)
        pairs.append((f, signal_service.add_white_noise(g_clean, settings.snr_db, derive_seed(seed, 2, i))))
        clean.append(g_clean)
    return LtiFixture(truth, pairs, clean)
