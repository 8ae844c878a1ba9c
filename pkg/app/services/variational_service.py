"""Mean-field variational inference: sampling, KL terms, ELBO gradients, Adam with cosine decay"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Protocol, Tuple

import numpy as np
from scipy import linalg

from app.errors import DimensionMismatchError, InvalidArgumentError, NumericalError
from app.models import DiagGaussian, Signal
from app.schemas import TrainConfig
from app.services import signal_service
from app.services.seeding import make_rng

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ElboResult(NamedTuple):
    loss: float
    grad_mean: np.ndarray
    grad_log_std: np.ndarray
    reconstruction: float
    kl: float


class ObservationModel(Protocol):
    dim: int

    def sq_error_and_grad(self, H: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Per-replica squared errors (R,) and their gradients (R, dim) for parameters H (R, dim)."""


class Prior(Protocol):
    def kl_divergence(self, q: DiagGaussian) -> float: ...

    def kl_gradients(self, q: DiagGaussian) -> Tuple[np.ndarray, np.ndarray]: ...


def sample(q: DiagGaussian, n: int, seed: int) -> np.ndarray:
    """n reparameterized draws mean + std * eps, one per row."""
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    eps = make_rng(seed).standard_normal((n, q.dim))
    return q.mean + q.std * eps


# KL divergences

@dataclass(frozen=True)
class IsotropicPrior:
    """Zero-mean N(0, std^2 I)"""
    std: float
    dim: int

    def __post_init__(self):
        if not (math.isfinite(self.std) and self.std > 0):
            raise InvalidArgumentError(f"prior std must be positive, got {self.std}")
        if self.dim < 1:
            raise InvalidArgumentError(f"prior dim must be >= 1, got {self.dim}")

    def _check(self, q: DiagGaussian) -> None:
        if q.dim != self.dim:
            raise DimensionMismatchError(f"q has {q.dim} dims, prior has {self.dim}")

    def kl_divergence(self, q: DiagGaussian) -> float:
        return kl_to_isotropic(q, self)

    def kl_gradients(self, q: DiagGaussian) -> Tuple[np.ndarray, np.ndarray]:
        self._check(q)
        var_p = self.std ** 2
        return q.mean / var_p, q.std ** 2 / var_p - 1.0


def kl_to_isotropic(q: DiagGaussian, prior: IsotropicPrior) -> float:
    prior._check(q)
    var_p = prior.std ** 2
    terms = (math.log(prior.std) - q.log_std
             + (q.std ** 2 + q.mean ** 2) / (2.0 * var_p) - 0.5)
    return float(np.sum(terms))


def _checked_factor(chol: np.ndarray, dim: int) -> np.ndarray:
    chol = np.asarray(chol, dtype=float)
    if chol.shape != (dim, dim):
        raise DimensionMismatchError(f"prior factor must be ({dim}, {dim}), got {chol.shape}")
    diag = np.diag(chol)
    if not np.all(np.isfinite(chol)) or np.any(np.abs(diag) <= 0.0):
        raise NumericalError("prior covariance factor is singular")
    return chol


def kl_to_full_gaussian(q: DiagGaussian, prior_mean: np.ndarray, prior_cov_chol: np.ndarray) -> float:
    """KL(q || N(prior_mean, L L^T)) through triangular solves against the lower factor L."""
    L = _checked_factor(prior_cov_chol, q.dim)
    prior_mean = np.asarray(prior_mean, dtype=float).reshape(-1)
    if prior_mean.size != q.dim:
        raise DimensionMismatchError("prior mean and q differ in length")
    L_inv = linalg.solve_triangular(L, np.eye(q.dim), lower=True)
    trace_term = float(np.sum((L_inv ** 2) * (q.std ** 2)[None, :]))
    alpha = linalg.solve_triangular(L, q.mean - prior_mean, lower=True)
    logdet_prior = 2.0 * float(np.sum(np.log(np.abs(np.diag(L)))))
    logdet_q = 2.0 * float(np.sum(q.log_std))
    return 0.5 * (trace_term + float(alpha @ alpha) - q.dim + logdet_prior - logdet_q)


@dataclass(frozen=True)
class FullGaussianPrior:
    mean: np.ndarray
    chol: np.ndarray
    precision: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        chol = _checked_factor(self.chol, mean.size)
        L_inv = linalg.solve_triangular(chol, np.eye(mean.size), lower=True)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "precision", L_inv.T @ L_inv)

    def kl_divergence(self, q: DiagGaussian) -> float:
        return kl_to_full_gaussian(q, self.mean, self.chol)

    def kl_gradients(self, q: DiagGaussian) -> Tuple[np.ndarray, np.ndarray]:
        if q.dim != self.mean.size:
            raise DimensionMismatchError(f"q has {q.dim} dims, prior has {self.mean.size}")
        return self.precision @ (q.mean - self.mean), q.std ** 2 * np.diag(self.precision) - 1.0


# Observation models

class ConvolutionModel:
    """Time-invariant FIR regression over one or more (f, g) pairs.

    Keeps only X^T X, X^T g and g^T g, so the exact squared error of any
    tap vector costs O(p^2) regardless of signal length.
    """

    def __init__(self, gram: np.ndarray, cross: np.ndarray, energy: float):
        self.gram = gram
        self.cross = cross
        self.energy = energy
        self.dim = cross.size

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[Signal, Signal]], p: int,
                   reduction: str = "mean") -> "ConvolutionModel":
        gram = np.zeros((p, p))
        cross = np.zeros(p)
        energy = 0.0
        count = 0
        for f, g in pairs:
            if len(f) != len(g):
                raise DimensionMismatchError(f"pair {count}: input has {len(f)} samples, output {len(g)}")
            X = signal_service.lag_matrix(f.samples, p)
            weight = 1.0 / len(f) if reduction == "mean" else 1.0
            gram += weight * (X.T @ X)
            cross += weight * (X.T @ g.samples)
            energy += weight * float(g.samples @ g.samples)
            count += 1
        if count == 0:
            raise InvalidArgumentError("at least one (f, g) pair is required")
        return cls(gram, cross, energy)

    def sq_error_and_grad(self, H: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        HA = H @ self.gram
        losses = self.energy - 2.0 * (H @ self.cross) + np.einsum("rk,rk->r", HA, H)
        return losses, -2.0 * (self.cross[None, :] - HA)

    def least_squares(self) -> np.ndarray:
        return linalg.solve(self.gram, self.cross, assume_a="pos")


class WindowConvolutionModel:
    """Time-varying FIR regression over one window.

    Parameters are laid out (W, p) row-major: entry w * p + k is tap k + 1 at
    window step w. lags holds the (W, p) lag rows including the input context
    preceding the window.
    """

    def __init__(self, lags: np.ndarray, target: np.ndarray, reduction: str = "mean"):
        lags = np.asarray(lags, dtype=float)
        target = np.asarray(target, dtype=float).reshape(-1)
        if lags.ndim != 2 or lags.shape[0] != target.size:
            raise DimensionMismatchError("window lag rows and targets differ in length")
        self.lags = lags
        self.target = target
        self.window, self.p = lags.shape
        self.dim = self.window * self.p
        self.scale = 1.0 / self.window if reduction == "mean" else 1.0

    def sq_error_and_grad(self, H: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        taps = H.reshape(H.shape[0], self.window, self.p)
        residual = self.target[None, :] - np.einsum("rwk,wk->rw", taps, self.lags)
        losses = self.scale * np.sum(residual ** 2, axis=1)
        grads = -2.0 * self.scale * residual[:, :, None] * self.lags[None, :, :]
        return losses, grads.reshape(H.shape[0], self.dim)


# ELBO

def elbo_terms(model: ObservationModel, prior: Prior, q: DiagGaussian,
               noise: np.ndarray, beta: float) -> ElboResult:
    """Sampled negative ELBO and its exact reparameterization gradients for fixed noise."""
    if noise.ndim != 2 or noise.shape[1] != q.dim:
        raise DimensionMismatchError(f"noise must be (R, {q.dim}), got {noise.shape}")
    if model.dim != q.dim:
        raise DimensionMismatchError(f"model has {model.dim} parameters, q has {q.dim}")
    std = q.std
    H = q.mean + noise * std
    losses, grads = model.sq_error_and_grad(H)
    reconstruction = float(np.mean(losses))
    kl = prior.kl_divergence(q)
    kl_mean, kl_log_std = prior.kl_gradients(q)
    grad_mean = grads.mean(axis=0) + beta * kl_mean
    grad_log_std = (grads * noise).mean(axis=0) * std + beta * kl_log_std
    return ElboResult(reconstruction + beta * kl, grad_mean, grad_log_std, reconstruction, kl)


def elbo_and_grads(f: Signal, g: Signal, q: DiagGaussian, prior: Prior, cfg: TrainConfig,
                   fixed_noise: Optional[np.ndarray] = None,
                   rng: Optional[np.random.Generator] = None) -> ElboResult:
    """Replicated single-pair ELBO; deterministic when fixed_noise is supplied."""
    model = ConvolutionModel.from_pairs([(f, g)], q.dim, cfg.reduction)
    if fixed_noise is None:
        rng = rng if rng is not None else make_rng(cfg.seed)
        fixed_noise = rng.standard_normal((cfg.batch_replicas, q.dim))
    return elbo_terms(model, prior, q, np.asarray(fixed_noise, dtype=float), cfg.beta)


# Optimizer

def lr_schedule(step: int, steps: int, lr_init: float) -> float:
    return lr_init * 0.5 * (1.0 + math.cos(math.pi * step / steps))


Objective = Callable[[DiagGaussian, int], ElboResult]


def adam_cosine_fit(objective: Objective, q0: DiagGaussian, cfg: TrainConfig,
                    callback: Optional[Callable[[int, float], None]] = None) -> DiagGaussian:
    """Adam over (mean, log_std) with a cosine-decayed learning rate.

    objective(q, step) must draw its noise from its own seeded generator so the
    whole fit is a function of the config.
    """
    params = np.concatenate([q0.mean, q0.log_std])
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    dim = q0.dim
    q = q0
    for step in range(cfg.steps):
        result = objective(q, step)
        grad = np.concatenate([result.grad_mean, result.grad_log_std])
        if not math.isfinite(result.loss) or not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite loss or gradient at step {step} (loss={result.loss})")
        if callback is not None:
            callback(step, result.loss)
        if step % cfg.log_every == 0:
            logger.debug("step %d loss %.6g (reconstruction %.6g, kl %.6g)",
                         step, result.loss, result.reconstruction, result.kl)
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grad
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grad ** 2
        m_hat = m / (1.0 - ADAM_BETA1 ** (step + 1))
        v_hat = v / (1.0 - ADAM_BETA2 ** (step + 1))
        params = params - lr_schedule(step, cfg.steps, cfg.lr_init) * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if not np.all(np.isfinite(params)):
            raise NumericalError(f"parameters diverged at step {step}")
        q = DiagGaussian(params[:dim], params[dim:])
    return q
