"""Synthetic ambient-noise experiment: CCF stacking vs posterior-mean IR, J0 dispersion fitting"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from app.config import settings as runtime_settings
from app.errors import DimensionMismatchError, InvalidArgumentError, NumericalError
from app.models import DispersionCurve, Fir, LagSeries, MisfitMap, Signal, Spectrum
from app.schemas import AntScenario, AntSettings, SweepRow, TrainConfig
from app.services import signal_service
from app.services.lti_service import LtiFit, fit_lti
from app.services.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

Pair = Tuple[Signal, Signal]
Estimate = Union[Fir, LagSeries, Spectrum]

IMAG_TOL = 1e-10
SERIES_CUTOFF = 12.0
SERIES_TERMS = 60
ASYMPTOTIC_TERMS = 40
DEFAULT_TIE_TOLERANCE = 1e-12


# Medium and noise field

def _band_amplitude(freqs: np.ndarray, lo: float, hi: float, taper: float) -> np.ndarray:
    """1 inside [lo, hi], raised-cosine tapers of width taper outside, 0 beyond."""
    amp = ((freqs >= lo) & (freqs <= hi)).astype(float)
    if taper > 0:
        below = (freqs < lo) & (freqs > lo - taper)
        above = (freqs > hi) & (freqs < hi + taper)
        amp[below] = 0.5 * (1.0 + np.cos(np.pi * (lo - freqs[below]) / taper))
        amp[above] = 0.5 * (1.0 + np.cos(np.pi * (freqs[above] - hi) / taper))
    return amp


def dispersive_ir(dispersion: DispersionCurve, d: float, n_taps: int, sample_rate: float,
                  taper_width: float = 0.25) -> Fir:
    """Inter-receiver medium response H(f) = A(f) exp(-i 2 pi f d / c(f)) as a causal FIR."""
    if d <= 0:
        raise InvalidArgumentError(f"receiver distance must be positive, got {d}")
    if n_taps < 1:
        raise InvalidArgumentError(f"n_taps must be >= 1, got {n_taps}")
    lo, hi = dispersion.band
    if hi + taper_width >= sample_rate / 2:
        raise InvalidArgumentError("dispersion band plus taper must stay below Nyquist")
    max_travel = d / float(np.min(dispersion.velocities))
    if max_travel > n_taps / sample_rate:
        raise InvalidArgumentError(
            f"travel time {max_travel:.4g} s exceeds the {n_taps}-tap span of {n_taps / sample_rate:.4g} s")
    n_fft = 1 << max(3, math.ceil(math.log2(8 * n_taps)))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    half = _band_amplitude(freqs, lo, hi, taper_width) * np.exp(
        -2j * np.pi * freqs * d / dispersion.velocity_at(freqs))
    full = np.zeros(n_fft, dtype=complex)
    full[:half.size] = half
    full[half.size:] = np.conj(half[1:n_fft // 2][::-1])
    full[0] = full[0].real
    full[n_fft // 2] = full[n_fft // 2].real
    ir = np.fft.ifft(full)
    if np.max(np.abs(ir.imag)) >= IMAG_TOL:
        raise NumericalError("inverse FFT of the medium spectrum is not real")
    # ir[m] is the response at delay m; tap i carries delay i + 1
    return Fir(ir.real[1:n_taps + 1])


def scenario_curve(scenario: AntScenario) -> DispersionCurve:
    return DispersionCurve(scenario.dispersion_freqs, scenario.dispersion_velocities)


def _impulse_source(length: int, n_sources: int, seed: int, sample_rate: float) -> Signal:
    rng = make_rng(seed)
    out = np.zeros(length)
    positions = rng.integers(0, length, size=n_sources)
    np.add.at(out, positions, rng.choice([-1.0, 1.0], size=n_sources))
    if not np.any(out):
        out[positions[0]] = 1.0
    return Signal(out, sample_rate)


def gen_ant_pairs(scenario: AntScenario, ir: Optional[Fir] = None) -> List[Pair]:
    """Receiver A records a source mixture, receiver B the same mixture through the medium.

    Each receiver gets independent noise at scenario.snr_db.
    """
    if ir is None:
        ir = dispersive_ir(scenario_curve(scenario), scenario.receiver_distance, scenario.n_taps,
                           scenario.sample_rate, scenario.taper_width)
    pairs: List[Pair] = []
    for i in range(scenario.n_pairs):
        source_seed = derive_seed(scenario.seed, i, 0)
        if scenario.source_kind == "impulse":
            source = _impulse_source(scenario.signal_length, scenario.sources_per_pair, source_seed,
                                     scenario.sample_rate)
        else:
            source = signal_service.gen_pulse_train(scenario.signal_length, scenario.sources_per_pair,
                                                    source_seed, scenario.sample_rate)
        a = signal_service.add_white_noise(source, scenario.snr_db, derive_seed(scenario.seed, i, 1))
        b = signal_service.add_white_noise(signal_service.convolve(source, ir), scenario.snr_db,
                                           derive_seed(scenario.seed, i, 2))
        pairs.append((a, b))
    logger.debug("generated %d noise-field pairs (seed %d)", len(pairs), scenario.seed)
    return pairs


# Classical baseline

@dataclass(frozen=True)
class CcfStack:
    mean: LagSeries
    std: np.ndarray
    per_pair: np.ndarray  # (n_pairs, 2 max_lag + 1)
    n_segments: int


def ccf_stack(pairs: Sequence[Pair], window_length: int, water_level: float, max_lag: int) -> CcfStack:
    """Whiten, segment and cross-correlate every pair; stack all segments."""
    if not pairs:
        raise InvalidArgumentError("at least one pair is required")
    segments: List[np.ndarray] = []
    per_pair: List[np.ndarray] = []
    for i, (a, b) in enumerate(pairs):
        if len(a) != len(b):
            raise DimensionMismatchError(f"pair {i}: receivers have {len(a)} and {len(b)} samples")
        if window_length > len(a):
            raise InvalidArgumentError(f"window {window_length} longer than the {len(a)}-sample signals")
        pair_segments = []
        for start in range(0, len(a) - window_length + 1, window_length):
            seg_a = signal_service.spectral_whiten(a.with_samples(a.samples[start:start + window_length]), water_level)
            seg_b = signal_service.spectral_whiten(b.with_samples(b.samples[start:start + window_length]), water_level)
            pair_segments.append(signal_service.cross_correlate(seg_a, seg_b, max_lag).values)
        segments.extend(pair_segments)
        per_pair.append(np.mean(pair_segments, axis=0))
    stacked = np.mean(segments, axis=0)
    per_pair_arr = np.asarray(per_pair)
    lags = np.arange(-max_lag, max_lag + 1)
    return CcfStack(LagSeries(lags, stacked, pairs[0][0].sample_rate), per_pair_arr.std(axis=0),
                    per_pair_arr, len(segments))


# Bayesian pipeline

def medium_band(scenario: AntScenario) -> Tuple[float, float]:
    """Dispersion band widened by the taper, kept inside (0, Nyquist)."""
    lo, hi = scenario_curve(scenario).band
    nyquist = scenario.sample_rate / 2.0
    return max(lo - scenario.taper_width, lo / 2.0), min(hi + scenario.taper_width, 0.95 * nyquist)


def fit_mir(pairs: Sequence[Pair], p: int, cfg: TrainConfig,
            band: Optional[Tuple[float, float]] = None) -> LtiFit:
    """Posterior over the medium IR from (A, B) pairs: A is the input, B the output.

    With a band, both receivers first pass through the same zero-phase band-pass,
    which leaves the A -> B relation unchanged inside the band.
    """
    if not pairs:
        raise InvalidArgumentError("at least one pair is required")
    if band is not None:
        lo, hi = band
        pairs = [(signal_service.bandpass(a, lo, hi), signal_service.bandpass(b, lo, hi)) for a, b in pairs]
    return fit_lti(pairs, p, cfg)


# Beam patterns and dispersion

def _j0_series(x: np.ndarray) -> np.ndarray:
    q = -(x * x) / 4.0
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(1, SERIES_TERMS):
        term = term * q / (k * k)
        total = total + term
    return total


def _j0_asymptotic(x: np.ndarray) -> np.ndarray:
    """Hankel expansion sqrt(2 / (pi x)) (P cos chi - Q sin chi), summed until terms grow."""
    p_sum = np.ones_like(x)
    q_sum = np.zeros_like(x)
    term = np.ones_like(x)
    active = np.ones(x.shape, dtype=bool)
    for k in range(1, ASYMPTOTIC_TERMS):
        nxt = term * (-(2 * k - 1) ** 2) / (8.0 * k * x)
        active &= np.abs(nxt) < np.abs(term)
        sign = -1.0 if (k // 2) % 2 else 1.0
        contribution = np.where(active, sign * nxt, 0.0)
        if k % 2:
            q_sum += contribution
        else:
            p_sum += contribution
        term = nxt
    chi = x - np.pi / 4.0
    return np.sqrt(2.0 / (np.pi * x)) * (p_sum * np.cos(chi) - q_sum * np.sin(chi))


def bessel_j0(x):
    """Zeroth-order Bessel function of the first kind; series below 12, asymptotic above."""
    arr = np.abs(np.asarray(x, dtype=float))
    flat = arr.reshape(-1)
    out = np.empty_like(flat)
    small = flat < SERIES_CUTOFF
    out[small] = _j0_series(flat[small])
    out[~small] = _j0_asymptotic(flat[~small])
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def _phase_argument(freqs: np.ndarray, d: float, velocities: np.ndarray) -> np.ndarray:
    return 2.0 * np.pi * np.outer(freqs, d / np.asarray(velocities, dtype=float))


def beam_pattern(freqs, d: float, velocities) -> np.ndarray:
    """(n_freqs, n_velocities) grid of J0(2 pi f d / c)"""
    return bessel_j0(_phase_argument(np.asarray(freqs, dtype=float), d, velocities))


def beam_spectrum(estimate: Union[Fir, LagSeries], freqs, sample_rate: Optional[float] = None) -> Spectrum:
    """Re[e^{i pi/4} X(f) / |X(f)|] of an impulse-response estimate, 0 where X vanishes."""
    freqs = np.asarray(freqs, dtype=float)
    if isinstance(estimate, LagSeries):
        fs = estimate.sample_rate
        X = np.exp(-2j * np.pi * np.outer(freqs, estimate.lags) / fs) @ estimate.values
    else:
        if sample_rate is None:
            raise InvalidArgumentError("a FIR estimate needs an explicit sample_rate")
        X = signal_service.dtft_matrix(freqs, estimate.p, sample_rate) @ estimate.taps
    mag = np.abs(X)
    unit = np.divide(X, mag, out=np.zeros_like(X), where=mag > 0)
    return Spectrum(freqs, np.real(np.exp(1j * np.pi / 4.0) * unit))


def track_ridge(misfit: np.ndarray, max_jump: int, tie_tolerance: float = DEFAULT_TIE_TOLERANCE) -> np.ndarray:
    """Velocity index per frequency: global argmin first, then the best cell within max_jump."""
    picks = np.empty(misfit.shape[0], dtype=int)
    picks[0] = int(np.argmin(misfit[0]))
    for i in range(1, misfit.shape[0]):
        prev = picks[i - 1]
        lo = max(0, prev - max_jump)
        hi = min(misfit.shape[1] - 1, prev + max_jump)
        window = misfit[i, lo:hi + 1]
        candidates = lo + np.flatnonzero(window <= window.min() + tie_tolerance)
        picks[i] = int(candidates[np.argmin(np.abs(candidates - prev))])
    return picks


@dataclass(frozen=True)
class DispersionFit:
    misfit: MisfitMap
    curve: DispersionCurve
    ridge_misfit: float
    valid: bool


def dispersion_fit(estimate: Estimate, d: float, freq_grid, velocity_grid,
                   sample_rate: Optional[float] = None, max_jump: int = 3,
                   max_ridge_misfit: float = 0.05,
                   tie_tolerance: float = DEFAULT_TIE_TOLERANCE) -> DispersionFit:
    """Misfit map against J0 beam patterns and the continuity-tracked dispersion ridge.

    A Spectrum is compared to J0 as given. FIR and lag-series estimates are
    reduced to their phase-aligned unit spectrum and scaled by the far-field
    J0 envelope min(1, sqrt(2 / (pi x))) of each candidate velocity.
    """
    freqs = np.asarray(freq_grid, dtype=float).reshape(-1)
    velocities = np.asarray(velocity_grid, dtype=float).reshape(-1)
    if freqs.size == 0 or velocities.size == 0:
        raise InvalidArgumentError("frequency and velocity grids must be nonempty")
    if d <= 0:
        raise InvalidArgumentError(f"receiver distance must be positive, got {d}")
    if np.any(velocities <= 0):
        raise InvalidArgumentError("velocity grid must be positive")
    x = _phase_argument(freqs, d, velocities)
    pattern = bessel_j0(x)
    if isinstance(estimate, Spectrum):
        if not estimate.same_grid(Spectrum(freqs, np.zeros(freqs.size))):
            raise DimensionMismatchError("beam spectrum grid differs from the frequency grid")
        observed = np.real(estimate.values)[:, None]
    else:
        unit = beam_spectrum(estimate, freqs, sample_rate).values
        envelope = np.minimum(1.0, np.sqrt(2.0 / (np.pi * np.maximum(x, 1e-300))))
        observed = envelope * unit[:, None]
    misfit = (observed - pattern) ** 2
    picks = track_ridge(misfit, max_jump, tie_tolerance)
    ridge_misfit = float(np.mean(misfit[np.arange(freqs.size), picks]))
    return DispersionFit(
        MisfitMap(freqs, velocities, misfit),
        DispersionCurve(freqs, velocities[picks]),
        ridge_misfit,
        ridge_misfit <= max_ridge_misfit,
    )


def velocity_error_by_frequency(estimate: DispersionCurve, truth: DispersionCurve) -> Spectrum:
    """|c_est - c_true| / c_true at the estimate's frequencies inside the common band."""
    lo = max(estimate.band[0], truth.band[0])
    hi = min(estimate.band[1], truth.band[1])
    if lo > hi:
        raise InvalidArgumentError("estimate and truth cover disjoint bands")
    inside = (estimate.freqs >= lo) & (estimate.freqs <= hi)
    if not np.any(inside):
        raise InvalidArgumentError("no estimated frequency lies in the common band")
    freqs = estimate.freqs[inside]
    c_true = truth.velocity_at(freqs)
    return Spectrum(freqs, np.abs(estimate.velocities[inside] - c_true) / c_true)


def velocity_error(estimate: DispersionCurve, truth: DispersionCurve) -> float:
    """Band-mean relative absolute phase-velocity error."""
    return float(np.mean(velocity_error_by_frequency(estimate, truth).values))


def relative_uncertainty(freqs, samples: np.ndarray, sample_rate: float,
                         lags: Optional[np.ndarray] = None) -> Spectrum:
    """std over samples of |X(f)| divided by |mean X(f)|.

    Rows of samples are FIR taps, or lag-series values when lags is given.
    """
    freqs = np.asarray(freqs, dtype=float)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if lags is None:
        basis = signal_service.dtft_matrix(freqs, samples.shape[1], sample_rate)
    else:
        lags = np.asarray(lags)
        if lags.size != samples.shape[1]:
            raise DimensionMismatchError("lags and sample columns differ in length")
        basis = np.exp(-2j * np.pi * np.outer(freqs, lags) / sample_rate)
    X = samples @ basis.T
    mean_mag = np.abs(X.mean(axis=0))
    ratio = np.divide(np.abs(X).std(axis=0), mean_mag, out=np.full(freqs.size, np.inf), where=mean_mag > 0)
    return Spectrum(freqs, ratio)


# Comparison runs

def frequency_grid(settings: AntSettings) -> np.ndarray:
    lo, hi = settings.fit_band
    count = int(round((hi - lo) / settings.freq_step)) + 1
    return np.linspace(lo, lo + (count - 1) * settings.freq_step, count)


def velocity_grid(settings: AntSettings) -> np.ndarray:
    count = int(round((settings.velocity_max - settings.velocity_min) / settings.velocity_step)) + 1
    return np.linspace(settings.velocity_min, settings.velocity_min + (count - 1) * settings.velocity_step, count)


@dataclass(frozen=True)
class AntComparison:
    pair_count: int
    mir: LtiFit
    mir_dispersion: DispersionFit
    ccf: CcfStack
    ccf_dispersion: DispersionFit
    mir_error: float
    ccf_error: float


def compare_pipelines(pairs: Sequence[Pair], settings: AntSettings, cfg: TrainConfig,
                      quantized: bool = False) -> AntComparison:
    """Both estimators on the same pairs, fitted against the scenario's true dispersion.

    Clipped records have a flat spectrum, so for quantized pairs the MIR is fitted
    on the medium band only; the CCF whitens every segment either way.
    """
    scenario = settings.scenario
    truth = scenario_curve(scenario)
    freqs = frequency_grid(settings)
    velocities = velocity_grid(settings)
    fit_kwargs = dict(max_jump=settings.max_jump, max_ridge_misfit=settings.max_ridge_misfit)

    stack = ccf_stack(pairs, settings.ccf_window, settings.water_level, scenario.n_taps)
    ccf_disp = dispersion_fit(stack.mean, scenario.receiver_distance, freqs, velocities, **fit_kwargs)
    mir = fit_mir(pairs, scenario.n_taps, cfg, medium_band(scenario) if quantized else None)
    mir_disp = dispersion_fit(mir.mean_fir(), scenario.receiver_distance, freqs, velocities,
                              sample_rate=scenario.sample_rate, **fit_kwargs)
    return AntComparison(
        pair_count=len(pairs),
        mir=mir,
        mir_dispersion=mir_disp,
        ccf=stack,
        ccf_dispersion=ccf_disp,
        mir_error=velocity_error(mir_disp.curve, truth),
        ccf_error=velocity_error(ccf_disp.curve, truth),
    )


def quantize_pairs(pairs: Sequence[Pair]) -> List[Pair]:
    return [(signal_service.one_bit_quantize(a), signal_service.one_bit_quantize(b)) for a, b in pairs]


def prepare_pairs(scenario: AntScenario, quantize: bool) -> List[Pair]:
    pairs = gen_ant_pairs(scenario)
    if quantize:
        pairs = quantize_pairs(pairs)
    return pairs


def sweep_pairs(settings: AntSettings, pair_counts: Sequence[int], quantize: bool, cfg: TrainConfig,
                seed: int, max_workers: Optional[int] = None) -> List[SweepRow]:
    """Errors of both pipelines on nested pair subsets; count N uses the first N pairs."""
    counts = list(pair_counts)
    if not counts or counts != sorted(counts) or counts[0] < 1:
        raise InvalidArgumentError("pair_counts must be ascending positive integers")
    scenario = settings.scenario.model_copy(update={"seed": seed, "n_pairs": counts[-1]})
    pairs = prepare_pairs(scenario, quantize)

    def run(count: int) -> SweepRow:
        cell_cfg = cfg.model_copy(update={"seed": derive_seed(seed, count)})
        result = compare_pipelines(pairs[:count], settings, cell_cfg, quantized=quantize)
        logger.info("sweep seed %d, %d pairs: MIR %.4f (valid %s), CCF %.4f (valid %s)",
                    seed, count, result.mir_error, result.mir_dispersion.valid,
                    result.ccf_error, result.ccf_dispersion.valid)
        return SweepRow(pair_count=count, mir_error=result.mir_error, ccf_error=result.ccf_error,
                        seed=seed, mir_valid=result.mir_dispersion.valid,
                        ccf_valid=result.ccf_dispersion.valid)

    workers = max_workers if max_workers is not None else runtime_settings.MAX_WORKERS
    if workers <= 1:
        return [run(count) for count in counts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, counts))
