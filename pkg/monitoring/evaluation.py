"""Monte Carlo and finite-difference oracle suites behind `main.py selftest`"""
import logging
from typing import Callable, List, NamedTuple

import numpy as np

from app.models import CrossTimeCov, DiagGaussian, DispersionCurve, PosteriorIR, Signal, Spectrum
from app.schemas import TrainConfig
from app.services import ant_service, lti_service, moment_service, variational_service
from app.services.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)


class OracleCheck(NamedTuple):
    name: str
    passed: bool
    detail: str


def _random_psd(rng: np.random.Generator, dim: int) -> np.ndarray:
    A = rng.standard_normal((dim, dim))
    return A @ A.T / dim


def _variance_standard_error(x: np.ndarray) -> float:
    centered = x - x.mean()
    m2 = np.mean(centered ** 2)
    m4 = np.mean(centered ** 4)
    return float(np.sqrt(max(m4 - m2 ** 2, 0.0) / x.size))


def check_output_variance(instances: int, samples: int, seed: int) -> OracleCheck:
    """Quadratic-form variance against sampled constant-in-time fluctuations."""
    hits = 0
    for i in range(instances):
        rng = make_rng(derive_seed(seed, i))
        p = int(rng.integers(2, 9))
        f = Signal(rng.standard_normal(64))
        post = PosteriorIR(rng.standard_normal(p), cov=_random_psd(rng, p))
        n = int(rng.integers(p, 64))
        closed = moment_service.output_variance(f, post).samples[n]
        draws = moment_service.sample_output_components(f, post, samples, derive_seed(seed, i, 1)).fluctuations[:, n]
        if abs(draws.var() - closed) <= 3.0 * _variance_standard_error(draws):
            hits += 1
    needed = int(np.ceil(0.95 * instances))
    return OracleCheck("output_variance_vs_monte_carlo", hits >= needed, f"{hits}/{instances} within 3 s.e.")


def check_output_covariance(instances: int, samples: int, seed: int) -> OracleCheck:
    """Double-sum covariance against sampled dense cross-time fluctuations."""
    hits = 0
    n_steps, p = 16, 3
    for i in range(instances):
        rng = make_rng(derive_seed(seed, 100 + i))
        f = Signal(rng.standard_normal(n_steps))
        dense = _random_psd(rng, n_steps * p)
        cov = CrossTimeCov.dense(dense, p)
        n, m = (int(v) for v in rng.integers(1, n_steps, size=2))
        closed = moment_service.output_covariance(f, cov, n, m)
        E = make_rng(derive_seed(seed, 100 + i, 1)).multivariate_normal(
            np.zeros(n_steps * p), dense, size=samples, method="cholesky").reshape(samples, n_steps, p)
        x_n = np.array([f.samples[n - k] if n - k >= 0 else 0.0 for k in range(1, p + 1)])
        x_m = np.array([f.samples[m - k] if m - k >= 0 else 0.0 for k in range(1, p + 1)])
        g_n = E[:, n, :] @ x_n
        g_m = E[:, m, :] @ x_m
        products = (g_n - g_n.mean()) * (g_m - g_m.mean())
        if abs(products.mean() - closed) <= 3.0 * products.std() / np.sqrt(samples):
            hits += 1
    needed = int(np.ceil(0.95 * instances))
    return OracleCheck("output_covariance_vs_monte_carlo", hits >= needed, f"{hits}/{instances} within 3 s.e.")


def _loss_at(f, g, mean, log_std, prior, cfg, noise) -> float:
    q = DiagGaussian(mean, log_std)
    return variational_service.elbo_and_grads(f, g, q, prior, cfg, fixed_noise=noise).loss


def finite_difference_error(seed: int, p: int = 8, length: int = 64, step: float = 1e-5) -> float:
    """Relative L2 gap between analytic ELBO gradients and central differences."""
    rng = make_rng(seed)
    f = Signal(rng.standard_normal(length))
    g = Signal(rng.standard_normal(length))
    q = DiagGaussian(0.3 * rng.standard_normal(p), rng.uniform(-2.0, -0.5, size=p))
    prior = variational_service.IsotropicPrior(1.0 / np.sqrt(p), p)
    cfg = TrainConfig(batch_replicas=4, seed=0)
    noise = rng.standard_normal((cfg.batch_replicas, p))
    result = variational_service.elbo_and_grads(f, g, q, prior, cfg, fixed_noise=noise)
    analytic = np.concatenate([result.grad_mean, result.grad_log_std])
    params = np.concatenate([q.mean, q.log_std])
    numeric = np.empty_like(params)
    for j in range(params.size):
        up, down = params.copy(), params.copy()
        up[j] += step
        down[j] -= step
        numeric[j] = (_loss_at(f, g, up[:p], up[p:], prior, cfg, noise)
                      - _loss_at(f, g, down[:p], down[p:], prior, cfg, noise)) / (2 * step)
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12))


def check_elbo_gradients(instances: int, seed: int) -> OracleCheck:
    errors = [finite_difference_error(derive_seed(seed, 200 + i)) for i in range(instances)]
    worst = max(errors)
    return OracleCheck("elbo_gradient_finite_difference", worst <= 1e-4, f"worst relative error {worst:.2e}")


def check_kl_nonnegative(instances: int, seed: int) -> OracleCheck:
    worst = np.inf
    for i in range(instances):
        rng = make_rng(derive_seed(seed, 300 + i))
        d = int(rng.integers(1, 9))
        q = DiagGaussian(rng.standard_normal(d), rng.uniform(-2.0, 1.0, size=d))
        iso = variational_service.kl_to_isotropic(q, variational_service.IsotropicPrior(float(rng.uniform(0.1, 2.0)), d))
        chol = np.linalg.cholesky(_random_psd(rng, d) + 0.1 * np.eye(d))
        full = variational_service.kl_to_full_gaussian(q, rng.standard_normal(d), chol)
        worst = min(worst, iso, full)
    return OracleCheck("kl_nonnegativity", worst >= -1e-9, f"smallest KL {worst:.3e}")


def check_bessel_branches() -> OracleCheck:
    at_zero = ant_service.bessel_j0(0.0)
    first_zero = ant_service.bessel_j0(2.404825557695773)
    x = np.array([12.0])
    gap = float(np.abs(ant_service._j0_series(x) - ant_service._j0_asymptotic(x))[0])
    passed = at_zero == 1.0 and abs(first_zero) < 1e-9 and gap < 1e-9
    return OracleCheck("bessel_j0_branches", passed,
                       f"J0(0)={at_zero:.17g}, J0(first zero)={first_zero:.2e}, branch gap {gap:.2e}")


def check_dispersion_exactness() -> OracleCheck:
    """Forward-modeled J0 spectra of an on-grid curve invert to that curve."""
    freqs = np.round(np.arange(1.0, 4.0 + 1e-9, 0.05), 10)
    velocities = np.arange(1500.0, 3500.0 + 1e-9, 10.0)
    knots = DispersionCurve([0.5, 1.0, 2.0, 3.0, 4.0], [3000.0, 2700.0, 2350.0, 2150.0, 2000.0])
    true_c = velocities[np.argmin(np.abs(knots.velocity_at(freqs)[:, None] - velocities[None, :]), axis=1)]
    d = 2000.0
    spectrum = Spectrum(freqs, ant_service.bessel_j0(2 * np.pi * freqs * d / true_c))
    fit = ant_service.dispersion_fit(spectrum, d, freqs, velocities)
    cells = int(np.max(np.abs(fit.curve.velocities - true_c)) / 10.0 + 0.5)
    return OracleCheck("dispersion_fit_exactness", cells <= 1, f"max deviation {cells} grid cells")


def check_ccf_identity(samples: int, seed: int) -> OracleCheck:
    """Sample-mean posterior CCF against (f x f) * posterior mean."""
    rng = make_rng(derive_seed(seed, 400))
    p, max_lag = 8, 16
    f = Signal(rng.standard_normal(256))
    q = DiagGaussian(0.3 * rng.standard_normal(p), np.full(p, np.log(0.05)))
    fit = lti_service.LtiFit(q, np.zeros(1), TrainConfig())
    band = lti_service.posterior_ccf(fit, f, max_lag, samples, derive_seed(seed, 401))
    closed = lti_service.mean_ccf(fit, f, max_lag).values
    se = band.std / np.sqrt(samples)
    inside = np.abs(band.mean - closed) <= 3.0 * se + 1e-12
    return OracleCheck("posterior_ccf_identity", float(inside.mean()) >= 0.95,
                       f"{int(inside.sum())}/{inside.size} lags within 3 s.e.")


def run_selftest(quick: bool = False, seed: int = 0) -> List[OracleCheck]:
    scale = (5, 20_000) if quick else (20, 100_000)
    instances, samples = scale
    suites: List[Callable[[], OracleCheck]] = [
        lambda: check_output_variance(instances, samples, seed),
        lambda: check_output_covariance(instances, samples, seed),
        lambda: check_elbo_gradients(5 if quick else 50, seed),
        lambda: check_kl_nonnegative(100 if quick else 1000, seed),
        check_bessel_branches,
        check_dispersion_exactness,
        lambda: check_ccf_identity(2_000 if quick else 10_000, seed),
    ]
    results = []
    for suite in suites:
        result = suite()
        logger.info("%s: %s (%s)", result.name, "PASS" if result.passed else "FAIL", result.detail)
        results.append(result)
    return results
