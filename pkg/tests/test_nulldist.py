import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from gkcm import nulldist
from gkcm.exceptions import ConfigError
from gkcm.nulldist import GchisqDist, pvalue, pvalue_imhof, pvalue_mc, pvalue_moment, quantile

import oracles

weights = st.lists(st.floats(1e-3, 10.0), min_size=1, max_size=12)


def test_dist_validation():
    d = GchisqDist([0.5, 2.0, 0.0])
    np.testing.assert_array_equal(d.lambdas, [2.0, 0.5, 0.0])
    for bad in [[], [0.0, 0.0], [1.0, -0.1], [np.nan]]:
        with pytest.raises(ConfigError):
            GchisqDist(bad)


@pytest.mark.parametrize("method", nulldist.METHODS)
def test_zero_threshold_gives_one(method):
    assert pvalue([1.0, 0.3], 0.0, method) == 1.0


def test_chi2_one_tail():
    assert pvalue_imhof([1.0], 3.841459) == pytest.approx(0.05, abs=1e-4)
    for t in [0.01, 0.5, 3.0, 10.0, 30.0]:
        assert pvalue_imhof([1.0], t) == pytest.approx(stats.chi2.sf(t, 1), abs=1e-8)


def test_equal_pair_exponential():
    assert pvalue_imhof([1.0, 1.0], 2.0) == pytest.approx(math.exp(-1), abs=1e-6)
    for c, t in [(0.3, 0.1), (2.0, 11.0), (1e-4, 3e-4)]:
        assert pvalue_imhof([c, c], t) == pytest.approx(math.exp(-t / (2 * c)), abs=1e-8)


def test_mc_chi2_one():
    p = pvalue_mc([1.0], 3.841459, num_samples=1_000_000, seed=1)
    assert abs(p - 0.05) < 0.001
    with pytest.raises(ConfigError):
        pvalue_mc([1.0], 1.0, num_samples=10)


def test_mc_is_deterministic_and_positive():
    a = pvalue_mc([1.0, 0.5], 80.0, num_samples=2000, seed=3)
    assert a == pvalue_mc([1.0, 0.5], 80.0, num_samples=2000, seed=3)
    assert a == pytest.approx(1 / 2001)


def test_imhof_matches_independent_mc():
    rng = np.random.default_rng(7)
    for _ in range(5):
        lam = rng.exponential(size=rng.integers(1, 15))
        t = float(np.quantile(rng.chisquare(1, size=(20000, lam.size)) @ lam, 0.9))
        N = 400_000
        ref = oracles.gchisq_mc_tail(lam, t, N, seed=int(rng.integers(1 << 30)))
        assert abs(pvalue_imhof(lam, t) - ref) < 4 * math.sqrt(ref * (1 - ref) / N)


def test_moment_matching_exact_cases():
    for t in [0.2, 1.0, 3.841459, 9.0]:
        assert pvalue_moment([2.5], t) == pytest.approx(pvalue_imhof([2.5], t), abs=1e-6)
    for d in [2, 5]:
        assert pvalue_moment([0.7] * d, 4.0) == pytest.approx(stats.chi2.sf(4.0 / 0.7, d), rel=1e-12)


def test_moment_matching_skewed_bound():
    lam = [100.0] + [1.0] * 20
    q = quantile(lam, 0.05)
    assert abs(pvalue_moment(lam, q) - 0.05) < 0.05


def test_quantile_examples():
    assert quantile([1.0], 0.05) == pytest.approx(3.841459, abs=1e-4)
    assert quantile([1.0, 1.0], math.exp(-1)) == pytest.approx(2.0, abs=1e-5)
    lam = [3.0, 1.0, 0.2]
    q = quantile(lam, 0.01)
    assert pvalue_imhof(lam, q) == pytest.approx(0.01, abs=1e-6)
    assert quantile(lam, 0.01) > quantile(lam, 0.05) > quantile(lam, 0.5)
    with pytest.raises(ConfigError):
        quantile(lam, 1.0)


@given(weights, st.floats(0.0, 50.0), st.floats(0.0, 50.0))
def test_pvalue_range_and_monotone(lam, t1, t2):
    lo, hi = sorted([t1, t2])
    a, b = pvalue_imhof(lam, lo), pvalue_imhof(lam, hi)
    assert 0.0 <= b <= 1.0 and 0.0 <= a <= 1.0
    assert b <= a + 1e-8  # quadrature tolerance
    a, b = pvalue_moment(lam, lo), pvalue_moment(lam, hi)
    assert 0.0 <= b <= a <= 1.0


@given(weights, st.floats(0.01, 300.0), st.floats(1e-3, 1e3))
def test_positive_homogeneity(lam, t, c):
    a = pvalue_imhof(lam, t)
    b = pvalue_imhof([c * v for v in lam], c * t)
    assert b == pytest.approx(a, abs=1e-8)
    assert pvalue_moment([c * v for v in lam], c * t) == pytest.approx(pvalue_moment(lam, t), abs=1e-12)


def test_many_small_weights_are_fast():
    lam = 1.0 / np.arange(1, 1001) ** 2
    p = pvalue_imhof(lam, 2.5)
    assert 0 < p < 1


def test_fallback_to_mc_warns(monkeypatch):
    monkeypatch.setattr(nulldist, "_imhof", lambda lam, t: (np.nan, np.inf, False))
    with pytest.warns(nulldist.ImhofFallbackWarning):
        p = pvalue_imhof([1.0], 3.841459, fallback_samples=200_000, seed=0)
    assert abs(p - 0.05) < 0.003


def test_dispatch_rejects_unknown_method():
    with pytest.raises(ConfigError):
        pvalue([1.0], 1.0, "saddlepoint")


def test_no_integration_warnings_on_typical_spectra():
    rng = np.random.default_rng(0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for _ in range(20):
            lam = np.sort(rng.exponential(size=30))[::-1] ** 3
            for t in [0.1 * lam.sum(), lam.sum(), 5 * lam.sum()]:
                pvalue_imhof(lam, t)
