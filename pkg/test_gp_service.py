"""Tests for the windowed RBF prior"""
import numpy as np
import pytest
from scipy import linalg

from app.errors import DimensionMismatchError, NumericalError
from app.models import DiagGaussian
from app.schemas import RbfKernelSpec
from app.services import gp_service
from app.services.seeding import make_rng


@pytest.fixture
def prior():
    return gp_service.build_window_prior(10, 3, RbfKernelSpec(lengthscale=1.5, variance=0.5))


@pytest.fixture
def q(prior):
    rng = make_rng(0)
    return DiagGaussian(0.3 * rng.standard_normal(prior.dim), rng.uniform(-2.0, -0.5, prior.dim))


def test_rbf_gram_entries_and_factor():
    spec = RbfKernelSpec(lengthscale=2.0, variance=0.3, jitter=1e-6)
    factor = gp_service.rbf_gram(spec, 5)
    assert factor.gram[1, 3] == pytest.approx(0.3 * np.exp(-4.0 / 8.0))
    assert factor.gram[2, 2] == pytest.approx(0.3 + 1e-6)
    np.testing.assert_allclose(factor.gram, factor.gram.T)
    np.testing.assert_allclose(factor.chol @ factor.chol.T, factor.gram, atol=1e-12)


def test_gram_is_stationary():
    gram = gp_service.rbf_gram(RbfKernelSpec(lengthscale=3.0, variance=0.7), 12).gram
    for offset in range(12):
        band = np.diagonal(gram, offset=offset)
        assert np.all(band == band[0])


def test_very_long_lengthscale_gives_a_constant_rank_one_gram():
    spec = RbfKernelSpec(lengthscale=1e6, variance=0.5)
    factor = gp_service.rbf_gram(spec, 16)
    np.testing.assert_allclose(factor.gram, 0.5, atol=1e-6)
    eigenvalues = np.linalg.eigvalsh(factor.gram)
    assert eigenvalues[-1] == pytest.approx(8.0, rel=1e-6)
    assert eigenvalues[-2] < 1e-6


def test_default_jitter_scales_with_the_variance():
    assert RbfKernelSpec(variance=0.25).effective_jitter == pytest.approx(2.5e-9)


def test_failed_factorization_grows_the_jitter(monkeypatch):
    real = linalg.cholesky
    calls = []

    def flaky(a, lower=False):
        calls.append(a[0, 0])
        if len(calls) < 3:
            raise linalg.LinAlgError("not positive definite")
        return real(a, lower=lower)

    monkeypatch.setattr(gp_service.linalg, "cholesky", flaky)
    factor = gp_service.rbf_gram(RbfKernelSpec(lengthscale=1.0, variance=1.0, jitter=1e-8), 4)
    assert factor.jitter == pytest.approx(1e-6)
    assert len(calls) == 3


def test_factorization_gives_up_after_three_retries(monkeypatch):
    def broken(a, lower=False):
        raise linalg.LinAlgError("not positive definite")

    monkeypatch.setattr(gp_service.linalg, "cholesky", broken)
    with pytest.raises(NumericalError, match="lengthscale"):
        gp_service.rbf_gram(RbfKernelSpec(), 8)


def test_closed_form_kl_matches_the_per_tap_sum(prior, q):
    assert prior.kl_divergence(q) == pytest.approx(gp_service.window_kl(q, prior), rel=1e-8)


def test_kl_to_the_prior_itself_is_small(prior):
    std = np.sqrt(np.tile(np.diag(prior.factor.gram)[:, None], (1, prior.p)).reshape(-1))
    q = DiagGaussian(np.zeros(prior.dim), np.log(std))
    assert prior.kl_divergence(q) >= -1e-9


def test_kl_gradients_match_finite_differences(prior, q):
    grad_mean, grad_log_std = prior.kl_gradients(q)
    step = 1e-6
    for j in (0, 4, prior.dim - 1):
        e = np.zeros(prior.dim)
        e[j] = step
        d_mean = (prior.kl_divergence(DiagGaussian(q.mean + e, q.log_std))
                  - prior.kl_divergence(DiagGaussian(q.mean - e, q.log_std))) / (2 * step)
        d_log_std = (prior.kl_divergence(DiagGaussian(q.mean, q.log_std + e))
                     - prior.kl_divergence(DiagGaussian(q.mean, q.log_std - e))) / (2 * step)
        assert grad_mean[j] == pytest.approx(d_mean, rel=1e-5, abs=1e-6)
        assert grad_log_std[j] == pytest.approx(d_log_std, rel=1e-5, abs=1e-6)


def test_whiten_and_color_are_inverse(prior, q):
    np.testing.assert_allclose(prior.color(prior.whiten(q.mean)), q.mean, atol=1e-10)


def test_color_gradient_is_the_adjoint_of_color(prior):
    rng = make_rng(1)
    a = rng.standard_normal(prior.dim)
    z = rng.standard_normal(prior.dim)
    assert prior.color_gradient(a) @ z == pytest.approx(a @ prior.color(z))


def test_taps_are_independent_in_the_layout(prior):
    # perturbing one tap trajectory leaves the others' gradients untouched
    mean = np.zeros(prior.dim)
    mean[0::prior.p] = 1.0
    grad_mean, _ = prior.kl_gradients(DiagGaussian(mean, np.zeros(prior.dim)))
    assert not np.any(grad_mean[1::prior.p])
    assert not np.any(grad_mean[2::prior.p])


def test_prior_rejects_a_wrong_dimension(prior):
    with pytest.raises(DimensionMismatchError):
        prior.kl_divergence(DiagGaussian(np.zeros(prior.dim + 1), np.zeros(prior.dim + 1)))
