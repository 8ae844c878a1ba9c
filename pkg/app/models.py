"""Numerical domain models"""
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from app.errors import DimensionMismatchError, InvalidArgumentError

PSD_JITTER = 1e-10
SYMMETRY_TOL = 1e-9


def _as_real_vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.size < 1:
        raise InvalidArgumentError(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} must be finite")
    return arr


def check_psd(cov: np.ndarray, name: str = "cov") -> None:
    """Symmetry within 1e-9 and PSD-ness via a jittered Cholesky."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise InvalidArgumentError(f"{name} must be finite")
    if np.max(np.abs(cov - cov.T), initial=0.0) > SYMMETRY_TOL:
        raise InvalidArgumentError(f"{name} is not symmetric")
    scale = max(1.0, float(np.max(np.abs(np.diag(cov)), initial=0.0)))
    try:
        np.linalg.cholesky(cov + PSD_JITTER * scale * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as e:
        raise InvalidArgumentError(f"{name} is not positive semi-definite") from e


@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    sample_rate: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_real_vector(self.samples, "samples"))
        if not (np.isfinite(self.sample_rate) and self.sample_rate > 0):
            raise InvalidArgumentError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    def with_samples(self, samples: np.ndarray) -> "Signal":
        return Signal(samples, self.sample_rate)


@dataclass(frozen=True)
class Fir:
    """Causal FIR; taps[i] multiplies f[n - (i + 1)]"""
    taps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "taps", _as_real_vector(self.taps, "taps"))

    @property
    def p(self) -> int:
        return self.taps.size


@dataclass(frozen=True)
class Spectrum:
    frequencies: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=float).reshape(-1)
        values = np.asarray(self.values).reshape(-1)
        if freqs.size != values.size:
            raise DimensionMismatchError(
                f"frequency grid has {freqs.size} points but {values.size} values")
        if freqs.size > 1 and np.any(np.diff(freqs) <= 0):
            raise InvalidArgumentError("frequency grid must be strictly increasing")
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "values", values)

    def same_grid(self, other: "Spectrum") -> bool:
        return self.frequencies.shape == other.frequencies.shape and np.allclose(
            self.frequencies, other.frequencies, rtol=1e-12, atol=0.0)


@dataclass(frozen=True)
class LagSeries:
    lags: np.ndarray
    values: np.ndarray
    sample_rate: float = 1.0

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=int).reshape(-1)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if lags.size != values.size:
            raise DimensionMismatchError("lags and values differ in length")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "values", values)

    def at(self, lag: int) -> float:
        idx = np.flatnonzero(self.lags == lag)
        if idx.size == 0:
            raise InvalidArgumentError(f"lag {lag} outside the series")
        return float(self.values[idx[0]])


@dataclass(frozen=True)
class PosteriorIR:
    """Gaussian posterior over FIR taps, constant (p,) or per time (n, p).

    cov is (p, p) / (n, p, p); diag-only storage keeps a std of the mean's shape.
    """
    mean: np.ndarray
    cov: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        if mean.ndim not in (1, 2) or mean.shape[-1] < 1:
            raise DimensionMismatchError(f"mean must be (p,) or (n, p), got {mean.shape}")
        if not np.all(np.isfinite(mean)):
            raise InvalidArgumentError("posterior mean must be finite")
        if (self.cov is None) == (self.std is None):
            raise InvalidArgumentError("exactly one of cov or std must be given")
        object.__setattr__(self, "mean", mean)
        if self.std is not None:
            std = np.asarray(self.std, dtype=float)
            if std.shape != mean.shape:
                raise DimensionMismatchError("std must match the mean's shape")
            if not np.all(np.isfinite(std)) or np.any(std < 0):
                raise InvalidArgumentError("std must be finite and nonnegative")
            object.__setattr__(self, "std", std)
        else:
            cov = np.asarray(self.cov, dtype=float)
            if cov.shape != mean.shape + (mean.shape[-1],):
                raise DimensionMismatchError(
                    f"cov shape {cov.shape} does not match mean shape {mean.shape}")
            for block in cov.reshape(-1, mean.shape[-1], mean.shape[-1]):
                check_psd(block)
            object.__setattr__(self, "cov", cov)

    @property
    def p(self) -> int:
        return self.mean.shape[-1]

    @property
    def is_time_varying(self) -> bool:
        return self.mean.ndim == 2

    def covariance(self) -> np.ndarray:
        if self.cov is not None:
            return self.cov
        sq = self.std ** 2
        return sq[..., :, None] * np.eye(self.p)

    def cov_at(self, n: int) -> np.ndarray:
        cov = self.covariance()
        return cov[n] if cov.ndim == 3 else cov

    def mean_at(self, n: int) -> np.ndarray:
        return self.mean[n] if self.is_time_varying else self.mean


@dataclass(frozen=True)
class CrossTimeCov:
    """Cov[E_k[n], E_l[m]]: white-in-time (delta_{nm} Sigma[n]) or dense."""
    representation: Literal["white", "dense"]
    p: int
    n: int
    posterior: Optional[PosteriorIR] = None
    matrix: Optional[np.ndarray] = None

    MAX_DENSE_ENTRIES = 4096

    @classmethod
    def white(cls, posterior: PosteriorIR, n: int) -> "CrossTimeCov":
        if posterior.is_time_varying and posterior.mean.shape[0] != n:
            raise DimensionMismatchError("per-time posterior length differs from n")
        return cls("white", posterior.p, n, posterior=posterior)

    @classmethod
    def dense(cls, matrix: np.ndarray, p: int) -> "CrossTimeCov":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] % p:
            raise DimensionMismatchError(f"dense cov must be (n*p, n*p), got {matrix.shape}")
        if matrix.shape[0] > cls.MAX_DENSE_ENTRIES:
            raise InvalidArgumentError(
                f"dense cross-time covariance limited to n*p <= {cls.MAX_DENSE_ENTRIES}")
        check_psd(matrix, "dense cross-time cov")
        return cls("dense", p, matrix.shape[0] // p, matrix=matrix)

    def block(self, n: int, m: int) -> np.ndarray:
        """p x p matrix of Cov[E_k[n], E_l[m]]"""
        if self.representation == "white":
            if n != m:
                return np.zeros((self.p, self.p))
            return self.posterior.cov_at(n)
        p = self.p
        return self.matrix[n * p:(n + 1) * p, m * p:(m + 1) * p]

    def cov_fn(self, n: int, m: int, k: int, l: int) -> float:
        """Entry for 1-based taps k, l as in the convolution sum."""
        return float(self.block(n, m)[k - 1, l - 1])


@dataclass(frozen=True)
class DiagGaussian:
    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        log_std = np.array(self.log_std, dtype=float).reshape(-1)
        if mean.shape != log_std.shape:
            raise DimensionMismatchError("mean and log_std differ in length")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_std))):
            raise InvalidArgumentError("variational parameters must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_std", log_std)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    @classmethod
    def initial(cls, dim: int, log_std_init: float = -3.0) -> "DiagGaussian":
        return cls(np.zeros(dim), np.full(dim, float(log_std_init)))

    def block(self, index: np.ndarray) -> "DiagGaussian":
        return DiagGaussian(self.mean[index], self.log_std[index])


@dataclass(frozen=True)
class TimeVaryingIR:
    taps: np.ndarray
    std: Optional[np.ndarray] = None
    sample_rate: float = 1.0

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        if taps.ndim != 2 or min(taps.shape) < 1:
            raise DimensionMismatchError(f"taps must be an (n, p) matrix, got {taps.shape}")
        if not np.all(np.isfinite(taps)):
            raise InvalidArgumentError("taps must be finite")
        object.__setattr__(self, "taps", taps)
        if self.std is not None:
            std = np.asarray(self.std, dtype=float)
            if std.shape != taps.shape:
                raise DimensionMismatchError("std must match taps")
            if not np.all(np.isfinite(std)) or np.any(std < 0):
                raise InvalidArgumentError("std must be finite and nonnegative")
            object.__setattr__(self, "std", std)

    @property
    def n(self) -> int:
        return self.taps.shape[0]

    @property
    def p(self) -> int:
        return self.taps.shape[1]


@dataclass(frozen=True)
class DispersionCurve:
    freqs: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        freqs = _as_real_vector(self.freqs, "freqs")
        velocities = _as_real_vector(self.velocities, "velocities")
        if freqs.size != velocities.size:
            raise DimensionMismatchError("freqs and velocities differ in length")
        if freqs.size > 1 and np.any(np.diff(freqs) <= 0):
            raise InvalidArgumentError("dispersion frequency grid must be strictly increasing")
        if np.any(velocities <= 0):
            raise InvalidArgumentError("phase velocities must be positive")
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "velocities", velocities)

    @property
    def band(self) -> tuple:
        return float(self.freqs[0]), float(self.freqs[-1])

    def velocity_at(self, freqs) -> np.ndarray:
        # flat extrapolation outside the sampled band
        return np.interp(np.asarray(freqs, dtype=float), self.freqs, self.velocities)


@dataclass(frozen=True)
class MisfitMap:
    freqs: np.ndarray
    velocities: np.ndarray
    misfit: np.ndarray = field(repr=False)

    def __post_init__(self):
        misfit = np.asarray(self.misfit, dtype=float)
        if misfit.shape != (np.size(self.freqs), np.size(self.velocities)):
            raise DimensionMismatchError("misfit must be (n_freqs, n_velocities)")
        if not np.all(np.isfinite(misfit)) or np.any(misfit < 0):
            raise InvalidArgumentError("misfit must be finite and nonnegative")
        object.__setattr__(self, "misfit", misfit)
