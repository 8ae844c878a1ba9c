"""Deterministic signal primitives: convolution, correlation, spectra, filtering, noise"""
import logging
import math

import numpy as np
from scipy import linalg, signal as sps

from app.errors import DimensionMismatchError, InvalidArgumentError
from app.models import Fir, LagSeries, Signal, Spectrum, TimeVaryingIR
from app.services.seeding import make_rng

logger = logging.getLogger(__name__)

DEFAULT_WATER_LEVEL = 1e-4
DEFAULT_WAVELET_LENGTH = 32
DEFAULT_BANDPASS_ORDER = 4


def lag_matrix(samples: np.ndarray, p: int) -> np.ndarray:
    """(n, p) matrix whose entry (n, k) is f[n - k - 1], zero before the record."""
    samples = np.asarray(samples, dtype=float)
    if samples.size < 1:
        raise InvalidArgumentError("empty input signal")
    if p < 1:
        raise InvalidArgumentError(f"p must be >= 1, got {p}")
    first_col = np.concatenate(([0.0], samples[:-1]))
    return linalg.toeplitz(first_col, np.zeros(p))


def signal_power(x: Signal) -> float:
    return float(np.mean(x.samples ** 2))


def convolve(f: Signal, h: Fir) -> Signal:
    """g[n] = sum_{k=1..p} h[k] f[n-k]; output length equals the input length."""
    full = np.convolve(f.samples, h.taps)
    out = np.zeros(len(f))
    out[1:] = full[:len(f) - 1]
    return f.with_samples(out)


def convolve_ltv(f: Signal, H: TimeVaryingIR) -> Signal:
    """g[n] = sum_{k=1..p} H[n, k] f[n-k]"""
    if H.n != len(f):
        raise DimensionMismatchError(
            f"time-varying IR has {H.n} rows but the signal has {len(f)} samples")
    X = lag_matrix(f.samples, H.p)
    return f.with_samples(np.einsum("nk,nk->n", X, H.taps))


def cross_correlate(f: Signal, g: Signal, max_lag: int) -> LagSeries:
    """c[l] = sum_n f[n] g[n+l] for l in [-max_lag, max_lag], zero-padded."""
    if f.sample_rate != g.sample_rate:
        raise InvalidArgumentError("cross-correlation needs equal sample rates")
    if max_lag < 0 or max_lag >= max(len(f), len(g)):
        raise InvalidArgumentError(
            f"max_lag must be in [0, {max(len(f), len(g)) - 1}], got {max_lag}")
    full = sps.correlate(g.samples, f.samples, mode="full", method="auto")
    zero = len(f) - 1  # index of lag 0 in the full output
    lags = np.arange(-max_lag, max_lag + 1)
    idx = zero + lags
    valid = (idx >= 0) & (idx < full.size)
    values = np.zeros(lags.size)
    values[valid] = full[idx[valid]]
    return LagSeries(lags, values, f.sample_rate)


def power_spectrum(x: Signal, segment_length: int) -> Spectrum:
    """Welch PSD (Hann window, 50% overlap), one-sided density."""
    if segment_length < 2:
        raise InvalidArgumentError(f"segment_length must be >= 2, got {segment_length}")
    if segment_length > len(x):
        raise InvalidArgumentError("segment_length exceeds the signal length")
    freqs, psd = sps.welch(
        x.samples, fs=x.sample_rate, window="hann", nperseg=segment_length,
        noverlap=segment_length // 2, detrend=False, scaling="density",
        return_onesided=True)
    return Spectrum(freqs, psd)


def _frequency_grid(n_freqs: int, sample_rate: float) -> np.ndarray:
    return np.linspace(0.0, sample_rate / 2.0, n_freqs)


def frequency_response(h: Fir, n_freqs: int, sample_rate: float = 1.0) -> Spectrum:
    """DTFT of the taps on a uniform grid over [0, Nyquist]."""
    if n_freqs < h.p:
        raise InvalidArgumentError(f"n_freqs ({n_freqs}) must be >= p ({h.p})")
    freqs = _frequency_grid(n_freqs, sample_rate)
    # the leading zero encodes the one-sample delay of tap 1
    _, values = sps.freqz(np.concatenate(([0.0], h.taps)), worN=2 * np.pi * freqs / sample_rate)
    return Spectrum(freqs, values)


def dtft_matrix(freqs: np.ndarray, p: int, sample_rate: float = 1.0) -> np.ndarray:
    """(n_freqs, p) matrix exp(-i w k), k = 1..p"""
    omega = 2 * np.pi * np.asarray(freqs, dtype=float) / sample_rate
    return np.exp(-1j * np.outer(omega, np.arange(1, p + 1)))


def frequency_responses(taps: np.ndarray, n_freqs: int, sample_rate: float = 1.0):
    """Batched frequency_response for a (samples, p) tap matrix."""
    taps = np.atleast_2d(np.asarray(taps, dtype=float))
    if n_freqs < taps.shape[1]:
        raise InvalidArgumentError(f"n_freqs ({n_freqs}) must be >= p ({taps.shape[1]})")
    freqs = _frequency_grid(n_freqs, sample_rate)
    return freqs, taps @ dtft_matrix(freqs, taps.shape[1], sample_rate).T


def spectral_whiten(x: Signal, water_level: float = DEFAULT_WATER_LEVEL) -> Signal:
    """Unit magnitude above water_level * peak, phase kept; scaled-down elsewhere."""
    if not water_level > 0:
        raise InvalidArgumentError(f"water_level must be positive, got {water_level}")
    spec = np.fft.rfft(x.samples)
    mag = np.abs(spec)
    peak = mag.max()
    if peak == 0.0:
        return x.with_samples(np.zeros(len(x)))
    floor = water_level * peak
    whitened = spec / np.maximum(mag, floor)
    return x.with_samples(np.fft.irfft(whitened, n=len(x)))


def one_bit_quantize(x: Signal) -> Signal:
    # sign(0) = +1
    return x.with_samples(np.where(x.samples >= 0.0, 1.0, -1.0))


def bandpass(x: Signal, lo: float, hi: float, order: int = DEFAULT_BANDPASS_ORDER) -> Signal:
    """Zero-phase Butterworth band-pass between lo and hi (Hz), run forward and backward."""
    nyquist = x.sample_rate / 2.0
    if not 0.0 < lo < hi < nyquist:
        raise InvalidArgumentError(f"band ({lo}, {hi}) must satisfy 0 < lo < hi < {nyquist}")
    sos = sps.butter(order, [lo, hi], btype="bandpass", fs=x.sample_rate, output="sos")
    try:
        return x.with_samples(sps.sosfiltfilt(sos, x.samples))
    except ValueError as e:
        raise InvalidArgumentError(f"{len(x)} samples are too few for an order-{order} band-pass") from e


def add_white_noise(x: Signal, snr_db: float, seed: int) -> Signal:
    """x + N(0, power(x) / 10^(snr_db/10)); snr_db = +inf returns x unchanged."""
    if snr_db is None or (math.isinf(snr_db) and snr_db > 0):
        return x.with_samples(x.samples.copy())
    if not math.isfinite(snr_db):
        raise InvalidArgumentError(f"snr_db must be finite or +inf, got {snr_db}")
    power = signal_power(x)
    if power == 0.0:
        raise InvalidArgumentError("cannot set an SNR for a zero-power signal")
    noise_std = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    rng = make_rng(seed)
    return x.with_samples(x.samples + noise_std * rng.standard_normal(len(x)))


def gen_white_noise(length: int, seed: int, sample_rate: float = 1.0) -> Signal:
    if length < 1:
        raise InvalidArgumentError("length must be >= 1")
    return Signal(make_rng(seed).standard_normal(length), sample_rate)


def _wavelet(length: int, cycles: float, phase: float) -> np.ndarray:
    t = np.arange(length) / length
    return sps.windows.hann(length, sym=False) * np.exp(-3.0 * t) * np.sin(2 * np.pi * cycles * t + phase)


def gen_pulse_train(length: int, n_pulses: int, seed: int, sample_rate: float = 1.0,
                    wavelet_length: int = DEFAULT_WAVELET_LENGTH) -> Signal:
    """Sum of randomly placed, randomly scaled, decaying windowed wavelets."""
    if n_pulses < 1:
        raise InvalidArgumentError(f"n_pulses must be >= 1, got {n_pulses}")
    if length < wavelet_length:
        raise InvalidArgumentError(
            f"length {length} is too short for one wavelet of {wavelet_length} samples")
    rng = make_rng(seed)
    out = np.zeros(length)
    starts = rng.integers(0, length - wavelet_length + 1, size=n_pulses)
    amplitudes = rng.choice([-1.0, 1.0], size=n_pulses) * rng.lognormal(0.0, 0.5, size=n_pulses)
    cycles = rng.uniform(2.0, wavelet_length / 4.0, size=n_pulses)
    phases = rng.uniform(0.0, 2 * np.pi, size=n_pulses)
    for start, amp, cyc, ph in zip(starts, amplitudes, cycles, phases):
        out[start:start + wavelet_length] += amp * _wavelet(wavelet_length, cyc, ph)
    return Signal(out, sample_rate)
