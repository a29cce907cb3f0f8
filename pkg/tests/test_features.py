import numpy as np
import pytest

from seriesdiff.features import extract_features, minmax_normalize


def test_normalize_basic():
    np.testing.assert_allclose(minmax_normalize(np.array([2.0, 4.0, 6.0])), [0.0, 0.5, 1.0])


def test_normalize_constant_is_half():
    np.testing.assert_array_equal(minmax_normalize(np.full(10, 3.7)), np.full(10, 0.5))


def test_normalize_idempotent():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(50)
    once = minmax_normalize(x)
    np.testing.assert_array_equal(minmax_normalize(once), once)


def test_constant_series_conventions():
    f = extract_features(np.full(32, 0.5))
    assert f.variance == 0.0
    assert f.skewness == 0.0
    assert f.n_peaks == 0
    assert f.linearity == 0.0
    assert f.frequency == 0.0


def test_ramp_features():
    L = 64
    f = extract_features(np.arange(L) / (L - 1))
    assert f.mean == pytest.approx(0.5, abs=1e-12)
    assert f.linearity == pytest.approx(1.0, abs=1e-12)
    assert f.n_peaks == 0


def test_descending_ramp_has_negative_linearity():
    L = 64
    f = extract_features(1.0 - np.arange(L) / (L - 1))
    assert f.linearity == pytest.approx(-1.0, abs=1e-12)


def test_pure_sinusoid_frequency_and_peaks():
    L = 64
    x = np.sin(2 * np.pi * 5 * np.arange(L) / L)
    f = extract_features(minmax_normalize(x))
    assert f.frequency == pytest.approx(5 / 64)
    assert f.n_peaks == 5
    # raw sinusoid mean is ~0 within float fuzz
    raw_mean = float(np.mean(x))
    assert abs(raw_mean) < 1e-9


def test_skewness_sign():
    rng = np.random.default_rng(1)
    right = minmax_normalize(rng.exponential(1.0, 512))
    assert extract_features(right).skewness > 0.5
    left = minmax_normalize(-rng.exponential(1.0, 512))
    assert extract_features(left).skewness < -0.5


def test_variance_is_population_variance():
    x = minmax_normalize(np.array([0.0, 1.0] * 16, dtype=float))
    f = extract_features(x)
    assert f.variance == pytest.approx(0.25, abs=1e-12)


def test_frequency_tie_breaks_low_and_excludes_dc():
    # two equal-strength lines: argmax picks the lower bin
    L = 64
    i = np.arange(L)
    x = np.sin(2 * np.pi * 3 * i / L) + np.sin(2 * np.pi * 7 * i / L)
    f = extract_features(minmax_normalize(x))
    assert f.frequency == pytest.approx(3 / 64)
    # large DC offset must not win
    y = minmax_normalize(0.25 * np.sin(2 * np.pi * 4 * i / L) + 10.0)
    assert extract_features(y).frequency == pytest.approx(4 / 64)


def test_short_series_rejected():
    with pytest.raises(ValueError):
        extract_features(np.zeros(7))
    with pytest.raises(ValueError):
        minmax_normalize(np.array([]))
