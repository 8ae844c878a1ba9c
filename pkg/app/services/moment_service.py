"""Closed-form output moments of a stochastic FIR system h[n] = mu[n] + E[n]"""
import logging
from typing import NamedTuple, Optional

import numpy as np
from scipy import linalg

from app.errors import DimensionMismatchError, InvalidArgumentError
from app.models import PSD_JITTER, CrossTimeCov, Fir, PosteriorIR, Signal, Spectrum, TimeVaryingIR
from app.services import signal_service
from app.services.seeding import make_rng

logger = logging.getLogger(__name__)


class OutputComponents(NamedTuple):
    mean: Signal
    fluctuations: np.ndarray  # (n_samples, n)


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a PSD matrix, with the same jitter as the PSD check."""
    cov = np.asarray(cov, dtype=float)
    scale = max(1.0, float(np.max(np.abs(np.diag(cov)), initial=0.0)))
    return linalg.cholesky(cov + PSD_JITTER * scale * np.eye(cov.shape[0]), lower=True)


def _check_length(f: Signal, post: PosteriorIR) -> None:
    if post.is_time_varying and post.mean.shape[0] != len(f):
        raise DimensionMismatchError(
            f"posterior covers {post.mean.shape[0]} time steps but the signal has {len(f)}")


def expected_output(f: Signal, post: PosteriorIR) -> Signal:
    """Mean component of the output: the convolution with the mean taps."""
    _check_length(f, post)
    if post.is_time_varying:
        return signal_service.convolve_ltv(f, TimeVaryingIR(post.mean, sample_rate=f.sample_rate))
    return signal_service.convolve(f, Fir(post.mean))


def output_variance(f: Signal, post: PosteriorIR) -> Signal:
    """Var[g[n]] = f[n]^T Sigma[n] f[n] with f[n] = (f[n-1], ..., f[n-p])."""
    _check_length(f, post)
    X = signal_service.lag_matrix(f.samples, post.p)
    cov = post.covariance()
    if cov.ndim == 3:
        values = np.einsum("nk,nkl,nl->n", X, cov, X)
    else:
        values = np.einsum("nk,kl,nl->n", X, cov, X)
    return f.with_samples(values)


def _lag_vector(samples: np.ndarray, n: int, p: int) -> np.ndarray:
    idx = n - np.arange(1, p + 1)
    out = np.zeros(p)
    valid = idx >= 0
    out[valid] = samples[idx[valid]]
    return out


def output_covariance(f: Signal, cov: CrossTimeCov, n: int, m: int) -> float:
    """Cov[g[n], g[m]] = sum_k sum_l f[n-k] f[m-l] Cov[E_k[n], E_l[m]]."""
    if cov.n != len(f):
        raise DimensionMismatchError(f"cross-time covariance spans {cov.n} steps, signal has {len(f)}")
    for name, index in (("n", n), ("m", m)):
        if not 0 <= index < len(f):
            raise InvalidArgumentError(f"{name}={index} outside [0, {len(f)})")
    x_n = _lag_vector(f.samples, n, cov.p)
    x_m = _lag_vector(f.samples, m, cov.p)
    return float(x_n @ cov.block(n, m) @ x_m)


def _lag_autocovariance(sigma: np.ndarray) -> np.ndarray:
    """r[tau] = sum_k Sigma[k, k + tau] for tau = 0..p-1"""
    p = sigma.shape[0]
    return np.array([np.trace(sigma, offset=tau) for tau in range(p)])


def fluctuation_psd(post: PosteriorIR, n_freqs: int, sample_rate: float = 1.0,
                    n: Optional[int] = None) -> Spectrum:
    """S_E on [0, Nyquist]: DTFT of the tap-lag diagonal sums of Sigma.

    A per-time posterior uses Sigma[n] when n is given, else the time average.
    """
    if n_freqs < 1:
        raise InvalidArgumentError("n_freqs must be >= 1")
    cov = post.covariance()
    if cov.ndim == 3:
        sigma = cov[n] if n is not None else cov.mean(axis=0)
    else:
        sigma = cov
    r = _lag_autocovariance(sigma)
    freqs = np.linspace(0.0, sample_rate / 2.0, n_freqs)
    omega = 2 * np.pi * freqs / sample_rate
    taus = np.arange(1, r.size)
    values = r[0] + 2.0 * np.cos(np.outer(omega, taus)) @ r[1:]
    return Spectrum(freqs, np.maximum(values, 0.0))


def ltie_psd(input_psd: Spectrum, mean_fr: Spectrum, fluct_psd: Spectrum) -> Spectrum:
    """S_out = S_in * (|mu(f)|^2 + S_E(f)) under local stationarity."""
    if not (input_psd.same_grid(mean_fr) and input_psd.same_grid(fluct_psd)):
        raise DimensionMismatchError("input, mean-response and fluctuation spectra use different grids")
    values = np.real(input_psd.values) * (np.abs(mean_fr.values) ** 2 + np.real(fluct_psd.values))
    return Spectrum(input_psd.frequencies, values)


def simulate_output(f: Signal, post: PosteriorIR, seed: int) -> Signal:
    """One output draw with an independent h[n] per time step (white-in-time fluctuation)."""
    _check_length(f, post)
    rng = make_rng(seed)
    z = rng.standard_normal((len(f), post.p))
    cov = post.covariance()
    if cov.ndim == 3:
        factors = np.stack([psd_factor(block) for block in cov])
        taps = post.mean + np.einsum("nkl,nl->nk", factors, z)
    else:
        taps = post.mean + z @ psd_factor(cov).T
    return signal_service.convolve_ltv(f, TimeVaryingIR(taps, sample_rate=f.sample_rate))


def sample_output_components(f: Signal, post: PosteriorIR, n_samples: int, seed: int) -> OutputComponents:
    """Mean component and n_samples fluctuation components with E drawn once per sample."""
    if post.is_time_varying:
        raise InvalidArgumentError("component sampling needs a time-constant posterior")
    if n_samples < 1:
        raise InvalidArgumentError("n_samples must be >= 1")
    X = signal_service.lag_matrix(f.samples, post.p)
    rng = make_rng(seed)
    draws = rng.standard_normal((n_samples, post.p)) @ psd_factor(post.covariance()).T
    return OutputComponents(f.with_samples(X @ post.mean), draws @ X.T)
