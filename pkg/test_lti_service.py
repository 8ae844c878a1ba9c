"""Tests for the time-invariant estimator"""
import numpy as np
import pytest

from app.errors import DimensionMismatchError, InvalidArgumentError
from app.models import DiagGaussian, Fir, Signal
from app.schemas import LtiSettings, TrainConfig
from app.services import lti_service, moment_service, signal_service
from app.services.seeding import make_rng
from monitoring.evaluation import check_ccf_identity

FAST = TrainConfig(steps=400, batch_replicas=32, seed=1)


@pytest.fixture(scope="module")
def fixture():
    settings = LtiSettings(length=512, p=4, snr_db=20.0, n_pairs=4, max_lag=16, n_freqs=32)
    return lti_service.make_lti_fixture(settings, seed=3)


@pytest.fixture(scope="module")
def fit(fixture):
    return lti_service.fit_lti(fixture.pairs[:1], 4, FAST)


def test_fixture_is_reproducible(fixture):
    again = lti_service.make_lti_fixture(
        LtiSettings(length=512, p=4, snr_db=20.0, n_pairs=4, max_lag=16, n_freqs=32), seed=3)
    assert np.array_equal(again.truth.taps, fixture.truth.taps)
    assert np.array_equal(again.pairs[2][1].samples, fixture.pairs[2][1].samples)
    assert len(fixture.pairs) == len(fixture.clean) == 4


def test_random_fir_has_unit_energy():
    assert np.linalg.norm(lti_service.gen_random_fir(12, seed=0).taps) == pytest.approx(1.0)


def test_posterior_mean_is_close_to_the_truth(fit, fixture):
    assert lti_service.tap_rmse(fit.posterior.mean, fixture.truth.taps) < 0.1
    assert fit.train_trace.size == FAST.steps
    assert np.isfinite(fit.final_loss)


def test_fit_is_deterministic(fixture, fit):
    again = lti_service.fit_lti(fixture.pairs[:1], 4, FAST)
    assert np.array_equal(again.posterior.mean, fit.posterior.mean)
    assert np.array_equal(again.posterior.log_std, fit.posterior.log_std)


def test_more_pairs_tighten_the_posterior(fixture, fit):
    four = lti_service.fit_lti(fixture.pairs, 4, FAST)
    assert four.posterior.std.mean() < fit.posterior.std.mean()


def test_least_squares_is_exact_without_noise():
    settings = LtiSettings(length=256, p=5, snr_db=None, max_lag=8, n_freqs=16)
    fx = lti_service.make_lti_fixture(settings, seed=1)
    np.testing.assert_allclose(lti_service.least_squares_fir(fx.pairs, 5).taps, fx.truth.taps, atol=1e-9)


def test_zero_power_input_is_rejected():
    pair = (Signal(np.zeros(32)), Signal(np.ones(32)))
    with pytest.raises(InvalidArgumentError):
        lti_service.fit_lti([pair], 2, FAST)


def test_pair_length_mismatch_is_rejected():
    pair = (Signal(np.ones(32)), Signal(np.ones(31)))
    with pytest.raises(DimensionMismatchError):
        lti_service.least_squares_fir([pair], 2)


def test_predictive_band_centers_on_the_expected_output(fit, fixture):
    f = fixture.pairs[0][0]
    band = lti_service.posterior_predict(fit, f, 2000, seed=5)
    assert band.samples.shape == (2000, len(f))
    expected = moment_service.expected_output(f, fit.posterior_ir()).samples
    sd = np.sqrt(moment_service.output_variance(f, fit.posterior_ir()).samples)
    assert np.all(np.abs(band.mean - expected) <= 5 * sd / np.sqrt(2000) + 1e-12)
    assert np.all(band.lower <= band.upper)


def test_mean_ccf_matches_correlating_the_mean_output(fit, fixture):
    f = fixture.pairs[0][0]
    closed = lti_service.mean_ccf(fit, f, 12)
    direct = signal_service.cross_correlate(f, moment_service.expected_output(f, fit.posterior_ir()), 12)
    # the two differ only by the few samples truncated at the record's end
    np.testing.assert_allclose(closed.values, direct.values, atol=0.02 * np.max(np.abs(direct.values)))


def test_sample_mean_ccf_matches_the_closed_form():
    assert check_ccf_identity(2000, seed=0).passed


def test_frequency_band_of_a_tight_posterior_follows_the_mean():
    q = DiagGaussian([0.6, -0.3, 0.1], np.full(3, np.log(1e-6)))
    fit = lti_service.LtiFit(q, np.zeros(1), TrainConfig(), sample_rate=2.0)
    band = lti_service.posterior_frequency_response(fit, 16, 50, seed=0)
    truth = signal_service.frequency_response(Fir(q.mean), 16, 2.0)
    np.testing.assert_allclose(band.frequencies, truth.frequencies)
    np.testing.assert_allclose(band.magnitude.mean, np.abs(truth.values), atol=1e-4)


def test_coverage_counts_taps_inside_the_band():
    q = DiagGaussian([0.0, 0.0, 0.0, 0.0], np.log([0.1, 0.1, 0.1, 0.1]))
    fit = lti_service.LtiFit(q, np.zeros(1), TrainConfig())
    assert lti_service.coverage(fit, np.array([0.0, 0.2, 0.35, -0.25]), k=3.0) == 0.75


def test_frequency_band_coverage():
    q = DiagGaussian([0.6, -0.3, 0.1], np.full(3, np.log(0.05)))
    fit = lti_service.LtiFit(q, np.zeros(1), TrainConfig())
    band = lti_service.posterior_frequency_response(fit, 32, 400, seed=2)
    assert lti_service.frequency_band_coverage(band, Fir([0.6, -0.3, 0.1])) >= 0.9
    assert lti_service.frequency_band_coverage(band, Fir([2.0, 0.0, 0.0])) == 0.0


def test_record_round_trip_keeps_the_posterior(fit):
    restored = lti_service.LtiFit.from_record(fit.to_record())
    np.testing.assert_allclose(restored.posterior.mean, fit.posterior.mean)
    np.testing.assert_allclose(restored.posterior.std, fit.posterior.std)
    assert restored.final_loss == fit.final_loss


def test_restored_fit_keeps_the_final_loss_of_a_long_trace():
    q = DiagGaussian([0.5, -0.2], np.log([0.1, 0.1]))
    trace = np.linspace(3.0, 1.0, 401)
    trace[-1] = 0.25
    fit = lti_service.LtiFit(q, trace, TrainConfig(steps=401))
    record = fit.to_record()
    assert record.trace_downsampled[-1] != 0.25
    assert lti_service.LtiFit.from_record(record).final_loss == 0.25


def test_trace_is_downsampled_to_at_most_two_hundred_points(fit):
    assert len(fit.to_record().trace_downsampled) <= 200


def test_white_and_pulse_inputs():
    white = lti_service.input_signal("white", 128, 0, 1.0, 4)
    pulse = lti_service.input_signal("pulse", 128, 0, 1.0, 4)
    assert len(white) == len(pulse) == 128
    assert not np.array_equal(white.samples, pulse.samples)
    assert make_rng(0).standard_normal(128)[0] == white.samples[0]


def test_trailing_loss_falls_from_the_first_to_the_last_quarter(fit):
    quarter = fit.train_trace.size // 4
    trailing = np.convolve(fit.train_trace, np.ones(quarter) / quarter, mode="valid")
    assert trailing[-1] <= trailing[0]


def test_vanishing_kl_weight_recovers_least_squares():
    settings = LtiSettings(length=1024, p=6, snr_db=40.0)
    fx = lti_service.make_lti_fixture(settings, seed=5)
    cfg = TrainConfig(steps=800, batch_replicas=16, kl_weight=1e-6, seed=6)
    fit = lti_service.fit_lti(fx.pairs, 6, cfg)
    ls = lti_service.least_squares_fir(fx.pairs, 6)
    np.testing.assert_allclose(fit.posterior.mean, ls.taps, atol=1e-2)
