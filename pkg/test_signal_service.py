"""Tests for the deterministic signal primitives"""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from app.errors import DimensionMismatchError, InvalidArgumentError
from app.models import Fir, Signal, TimeVaryingIR
from app.services import signal_service
from app.services.seeding import derive_seed, make_rng

finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False, allow_infinity=False)


def test_lag_matrix_entries():
    X = signal_service.lag_matrix(np.array([1.0, 2.0, 3.0, 4.0]), 2)
    assert X.tolist() == [[0.0, 0.0], [1.0, 0.0], [2.0, 1.0], [3.0, 2.0]]


def test_unit_first_tap_delays_by_one_sample():
    f = Signal([1.0, -2.0, 3.0, 0.5])
    g = signal_service.convolve(f, Fir([1.0]))
    assert g.samples.tolist() == [0.0, 1.0, -2.0, 3.0]


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=1, max_size=40), st.lists(finite, min_size=1, max_size=6))
def test_convolve_matches_lag_matrix(samples, taps):
    f = Signal(samples)
    g = signal_service.convolve(f, Fir(taps))
    expected = signal_service.lag_matrix(f.samples, len(taps)) @ np.asarray(taps)
    assert len(g) == len(f)
    np.testing.assert_allclose(g.samples, expected, atol=1e-9)


def test_convolve_ltv_with_constant_rows_equals_convolve():
    rng = make_rng(3)
    f = Signal(rng.standard_normal(50))
    taps = rng.standard_normal(4)
    H = TimeVaryingIR(np.tile(taps, (50, 1)))
    np.testing.assert_allclose(signal_service.convolve_ltv(f, H).samples,
                               signal_service.convolve(f, Fir(taps)).samples, atol=1e-12)


def test_convolve_ltv_rejects_row_mismatch():
    with pytest.raises(DimensionMismatchError):
        signal_service.convolve_ltv(Signal(np.ones(10)), TimeVaryingIR(np.ones((9, 2))))


def test_cross_correlation_peaks_at_the_delay():
    rng = make_rng(11)
    f = Signal(rng.standard_normal(400))
    g = f.with_samples(np.concatenate([np.zeros(3), f.samples[:-3]]))
    ccf = signal_service.cross_correlate(f, g, 10)
    assert ccf.lags.tolist() == list(range(-10, 11))
    assert ccf.lags[np.argmax(ccf.values)] == 3


def test_cross_correlation_definition():
    f = Signal([1.0, 2.0, 3.0])
    g = Signal([0.0, 1.0, 0.5])
    ccf = signal_service.cross_correlate(f, g, 2)
    # c[l] = sum_n f[n] g[n + l]
    assert ccf.at(0) == pytest.approx(1 * 0 + 2 * 1 + 3 * 0.5)
    assert ccf.at(1) == pytest.approx(1 * 1 + 2 * 0.5)
    assert ccf.at(-1) == pytest.approx(2 * 0 + 3 * 1)


def test_cross_correlation_rejects_bad_lag():
    f = Signal(np.ones(5))
    with pytest.raises(InvalidArgumentError):
        signal_service.cross_correlate(f, f, 5)
    with pytest.raises(InvalidArgumentError):
        signal_service.cross_correlate(f, f, -1)


def test_power_spectrum_of_white_noise_is_flat():
    x = signal_service.gen_white_noise(65536, seed=5)
    psd = signal_service.power_spectrum(x, 256)
    interior = psd.values[5:-5]
    # one-sided density of unit-variance white noise at fs = 1
    assert np.mean(interior) == pytest.approx(2.0, rel=0.05)


def test_frequency_response_of_single_tap_is_a_pure_delay():
    resp = signal_service.frequency_response(Fir([1.0]), 16, sample_rate=2.0)
    omega = 2 * np.pi * resp.frequencies / 2.0
    np.testing.assert_allclose(resp.values, np.exp(-1j * omega), atol=1e-12)
    assert resp.frequencies[-1] == pytest.approx(1.0)


def test_batched_frequency_responses_match_single():
    taps = make_rng(2).standard_normal((3, 5))
    freqs, batch = signal_service.frequency_responses(taps, 32)
    for row, values in zip(taps, batch):
        np.testing.assert_allclose(values, signal_service.frequency_response(Fir(row), 32).values, atol=1e-12)
    assert freqs.size == 32


def test_frequency_response_needs_enough_bins():
    with pytest.raises(InvalidArgumentError):
        signal_service.frequency_response(Fir(np.ones(8)), 4)


def test_spectral_whitening_flattens_the_magnitude():
    x = signal_service.gen_pulse_train(512, 10, seed=4)
    white = signal_service.spectral_whiten(x, water_level=1e-6)
    mag = np.abs(np.fft.rfft(white.samples))
    assert mag.max() == pytest.approx(1.0, abs=1e-9)
    assert np.median(mag) == pytest.approx(1.0, abs=1e-9)


def test_spectral_whitening_of_silence_is_silence():
    assert not np.any(signal_service.spectral_whiten(Signal(np.zeros(16))).samples)


def test_one_bit_quantize_maps_zero_to_plus_one():
    q = signal_service.one_bit_quantize(Signal([-0.2, 0.0, 3.0]))
    assert q.samples.tolist() == [-1.0, 1.0, 1.0]


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=2, max_size=30), st.lists(finite, min_size=1, max_size=5), finite, finite)
def test_convolve_is_linear_in_the_input(samples, taps, a, b):
    f1 = np.asarray(samples)
    f2 = f1[::-1] - 0.5
    h = Fir(taps)
    combined = signal_service.convolve(Signal(a * f1 + b * f2), h).samples
    separate = (a * signal_service.convolve(Signal(f1), h).samples
                + b * signal_service.convolve(Signal(f2), h).samples)
    np.testing.assert_allclose(combined, separate, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=1, max_size=40))
def test_one_bit_quantize_is_idempotent(samples):
    once = signal_service.one_bit_quantize(Signal(samples))
    assert np.array_equal(signal_service.one_bit_quantize(once).samples, once.samples)


def test_add_white_noise_hits_the_requested_snr():
    clean = signal_service.gen_white_noise(40000, seed=1)
    noisy = signal_service.add_white_noise(clean, 10.0, seed=2)
    noise_power = np.mean((noisy.samples - clean.samples) ** 2)
    assert noise_power == pytest.approx(signal_service.signal_power(clean) / 10.0, rel=0.05)


def test_infinite_snr_returns_an_unchanged_copy():
    clean = Signal([1.0, 2.0])
    out = signal_service.add_white_noise(clean, math.inf, seed=0)
    assert out.samples.tolist() == [1.0, 2.0]
    assert out.samples is not clean.samples


def test_add_white_noise_rejects_bad_inputs():
    with pytest.raises(InvalidArgumentError):
        signal_service.add_white_noise(Signal(np.zeros(8)), 0.0, seed=0)
    with pytest.raises(InvalidArgumentError):
        signal_service.add_white_noise(Signal(np.ones(8)), -math.inf, seed=0)


def test_generators_are_deterministic():
    a = signal_service.gen_pulse_train(256, 5, seed=derive_seed(9, 1))
    b = signal_service.gen_pulse_train(256, 5, seed=derive_seed(9, 1))
    assert np.array_equal(a.samples, b.samples)
    assert len(a) == 256
    assert np.any(a.samples)


def test_pulse_train_rejects_short_records():
    with pytest.raises(InvalidArgumentError):
        signal_service.gen_pulse_train(8, 2, seed=0)


def _tone(freq: float, n: int = 2048, fs: float = 20.0) -> Signal:
    return Signal(np.sin(2 * np.pi * freq * np.arange(n) / fs), fs)


def test_bandpass_keeps_in_band_tones_without_a_phase_shift():
    tone = _tone(2.0)
    out = signal_service.bandpass(tone, 0.25, 4.25)
    np.testing.assert_allclose(out.samples[512:-512], tone.samples[512:-512], atol=1e-2)


def test_bandpass_removes_out_of_band_tones():
    out = signal_service.bandpass(_tone(8.0), 0.25, 4.25)
    assert np.sqrt(np.mean(out.samples[512:-512] ** 2)) < 0.01


def test_bandpass_commutes_with_convolution():
    f = signal_service.gen_white_noise(2048, seed=3, sample_rate=20.0)
    h = Fir(make_rng(4).standard_normal(8))
    filtered_output = signal_service.bandpass(signal_service.convolve(f, h), 0.25, 4.25).samples
    convolved_filtered = signal_service.convolve(signal_service.bandpass(f, 0.25, 4.25), h).samples
    mid = slice(512, -512)
    err = np.linalg.norm(filtered_output[mid] - convolved_filtered[mid])
    assert err < 1e-3 * np.linalg.norm(filtered_output[mid])


def test_bandpass_rejects_bad_bands_and_short_records():
    with pytest.raises(InvalidArgumentError):
        signal_service.bandpass(_tone(2.0), 4.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        signal_service.bandpass(_tone(2.0), 1.0, 10.0)
    with pytest.raises(InvalidArgumentError):
        signal_service.bandpass(_tone(2.0, n=8), 1.0, 4.0)
