"""Truncated GP priors over per-tap trajectories inside a time window"""
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Tuple

import numpy as np
from scipy import linalg

from app.errors import DimensionMismatchError, InvalidArgumentError, NumericalError
from app.models import DiagGaussian
from app.schemas import RbfKernelSpec
from app.services.variational_service import kl_to_full_gaussian

logger = logging.getLogger(__name__)

JITTER_GROWTH = 10.0
MAX_JITTER_RETRIES = 3


class GramFactor(NamedTuple):
    gram: np.ndarray
    chol: np.ndarray
    jitter: float


def rbf_gram(spec: RbfKernelSpec, W: int) -> GramFactor:
    """K[i, j] = var * exp(-(i - j)^2 / (2 l^2)) + jitter [i = j], with its lower Cholesky factor.

    Jitter grows tenfold per failed factorization, at most three times.
    """
    if W < 1:
        raise InvalidArgumentError(f"window must be >= 1, got {W}")
    t = np.arange(W, dtype=float)
    base = spec.variance * np.exp(-np.subtract.outer(t, t) ** 2 / (2.0 * spec.lengthscale ** 2))
    jitter = spec.effective_jitter
    for attempt in range(MAX_JITTER_RETRIES + 1):
        gram = base + jitter * np.eye(W)
        try:
            return GramFactor(gram, linalg.cholesky(gram, lower=True), jitter)
        except linalg.LinAlgError:
            if attempt == MAX_JITTER_RETRIES:
                break
            jitter = max(jitter, 1e-12) * JITTER_GROWTH
            logger.warning("RBF Gram (l=%g, W=%d) not PD, retrying with jitter %g",
                           spec.lengthscale, W, jitter)
    raise NumericalError(
        f"RBF Gram factorization failed for lengthscale {spec.lengthscale}, window {W}")


@dataclass(frozen=True)
class GPWindowPrior:
    """Zero-mean prior over a (W, p) window, independent across taps, one Gram per tap."""
    window: int
    p: int
    spec: RbfKernelSpec
    factor: GramFactor = field(init=False, repr=False)
    precision: np.ndarray = field(init=False, repr=False)
    logdet: float = field(init=False, repr=False)

    def __post_init__(self):
        if self.p < 1:
            raise InvalidArgumentError(f"p must be >= 1, got {self.p}")
        factor = rbf_gram(self.spec, self.window)
        L_inv = linalg.solve_triangular(factor.chol, np.eye(self.window), lower=True)
        object.__setattr__(self, "factor", factor)
        object.__setattr__(self, "precision", L_inv.T @ L_inv)
        object.__setattr__(self, "logdet", 2.0 * float(np.sum(np.log(np.diag(factor.chol)))))

    @property
    def dim(self) -> int:
        return self.window * self.p

    def _tap_blocks(self, values: np.ndarray) -> np.ndarray:
        """(p, W) view of a window-major (W * p,) parameter vector"""
        return values.reshape(self.window, self.p).T

    def _check(self, q: DiagGaussian) -> None:
        if q.dim != self.dim:
            raise DimensionMismatchError(f"q has {q.dim} dims, window prior has {self.dim}")

    def kl_divergence(self, q: DiagGaussian) -> float:
        self._check(q)
        mu = self._tap_blocks(q.mean)
        var = self._tap_blocks(q.std ** 2)
        trace = float(np.sum(var * np.diag(self.precision)[None, :]))
        mahal = float(np.einsum("kw,wv,kv->", mu, self.precision, mu))
        logdet_q = 2.0 * float(np.sum(q.log_std))
        return 0.5 * (trace + mahal - self.dim + self.p * self.logdet - logdet_q)

    def kl_gradients(self, q: DiagGaussian) -> Tuple[np.ndarray, np.ndarray]:
        self._check(q)
        mu = self._tap_blocks(q.mean)
        grad_mean = (mu @ self.precision).T.reshape(-1)
        prec_diag = np.tile(np.diag(self.precision)[:, None], (1, self.p)).reshape(-1)
        return grad_mean, q.std ** 2 * prec_diag - 1.0

    def whiten(self, mean: np.ndarray) -> np.ndarray:
        """z with mean[:, k] = L z[:, k] per tap, in the same (W * p,) layout."""
        blocks = mean.reshape(self.window, self.p)
        return linalg.solve_triangular(self.factor.chol, blocks, lower=True).reshape(-1)

    def color(self, z: np.ndarray) -> np.ndarray:
        return (self.factor.chol @ z.reshape(self.window, self.p)).reshape(-1)

    def color_gradient(self, grad_mean: np.ndarray) -> np.ndarray:
        """Chain rule from a gradient in mean coordinates to whitened coordinates: L^T g."""
        return (self.factor.chol.T @ grad_mean.reshape(self.window, self.p)).reshape(-1)


def build_window_prior(window: int, p: int, spec: RbfKernelSpec) -> GPWindowPrior:
    return GPWindowPrior(window, p, spec)


def window_kl(q: DiagGaussian, prior: GPWindowPrior) -> float:
    """Sum over taps of the full-Gaussian KL of each W-dim tap trajectory."""
    prior._check(q)
    total = 0.0
    for k in range(prior.p):
        block = q.block(np.arange(k, prior.dim, prior.p))
        total += kl_to_full_gaussian(block, np.zeros(prior.window), prior.factor.chol)
    return total
