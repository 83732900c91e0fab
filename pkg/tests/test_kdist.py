import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dptune import kdist
from dptune.errors import DomainError, ParameterError
from dptune.kdist import Geometric, Logarithmic, PointMass, Poisson, Truncated, TruncatedNegativeBinomial

# reference values from tools/derive_frozen_values.py (mpmath, 50 digits)
TNB_05_03_PMF = (0.42386127875258305, 0.2225271713451061, 0.12980751661797856, 0.07950710392851187)


def test_tnb_pmf_matches_reference():
    d = TruncatedNegativeBinomial(0.5, 0.3)
    for k, ref in enumerate(TNB_05_03_PMF, start=1):
        assert kdist.pmf(d, k) == pytest.approx(ref, rel=1e-13)
    assert kdist.pmf(d, 0) == 0.0


def test_tnb_moments_and_pgf_match_reference():
    d = TruncatedNegativeBinomial(0.5, 0.3)
    assert kdist.mean(d) == pytest.approx(2.5795375958419436, rel=1e-13)
    assert kdist.pgf(d, 0.7) == pytest.approx(0.48475208078658175, rel=1e-13)
    assert kdist.pgf_derivative(d, 0.7) == pytest.approx(1.1637735431919346, rel=1e-12)


def test_logarithmic_and_poisson_reference():
    lg = Logarithmic(0.1)
    assert kdist.mean(lg) == pytest.approx(3.9086503371292663, rel=1e-13)
    assert kdist.pmf(lg, 2) == pytest.approx(0.17588926517081699, rel=1e-13)
    assert kdist.pmf(Poisson(3.0), 2) == pytest.approx(0.22404180765538774, rel=1e-13)


def test_geometric_pmf_closed_form():
    g = Geometric(0.25)
    for k in range(1, 8):
        assert kdist.pmf(g, k) == pytest.approx(0.25 * 0.75 ** (k - 1), rel=1e-13)


def test_tail_bounds_match_reference():
    assert kdist.tail_bound(Geometric(0.5), 10) == pytest.approx(0.025206785075324191, rel=1e-9)
    assert kdist.tail_bound(Poisson(1.0), 5) == pytest.approx(0.017471408010606157, rel=1e-9)


def test_point_mass_basics():
    d = PointMass(3)
    assert kdist.mean(d) == 3.0
    assert kdist.pgf(d, 0.5) == 0.125
    assert kdist.pmf(d, 3) == 1.0 and kdist.pmf(d, 2) == 0.0
    assert kdist.min_positive_support(d) == 3
    assert kdist.truncation_stats(d, 3) == (0.0, 0.0)


@pytest.mark.parametrize("bad", [
    lambda: PointMass(0), lambda: PointMass(2.5), lambda: TruncatedNegativeBinomial(-1.0, 0.5),
    lambda: TruncatedNegativeBinomial(1.0, 0.0), lambda: TruncatedNegativeBinomial(1.0, 1.5),
    lambda: Poisson(0.0), lambda: Poisson(-1.0), lambda: Truncated(Poisson(1.0), 0),
])
def test_invalid_parameters_rejected(bad):
    with pytest.raises(ParameterError):
        bad()


def test_pgf_domain_checked():
    with pytest.raises((DomainError, ParameterError)):
        kdist.pgf(Geometric(0.5), 2.5)


def test_truncated_weights():
    t = Truncated(Geometric(0.5), 3)
    w = kdist.series_pmf(t)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    ref = np.array([0.0, 0.5, 0.25, 0.125]) / 0.875
    np.testing.assert_allclose(w[:4], ref, rtol=1e-14)
    assert kdist.pmf(t, 4) == 0.0


def test_truncation_stats_geometric():
    p, e = kdist.truncation_stats(Geometric(0.5), 3)
    assert p == pytest.approx(0.125, abs=1e-14)
    # E[K 1{K>3}] = sum_{k>=4} k 2^-k = 5/8
    assert e == pytest.approx(0.625, abs=1e-13)


def test_json_round_trip_all_families():
    for d in (PointMass(4), TruncatedNegativeBinomial(0.3, 0.2), Poisson(2.5), Truncated(Poisson(3.0), 7)):
        assert kdist.from_json(json.loads(json.dumps(kdist.to_json(d)))) == d


def test_json_aliases():
    assert kdist.from_json({"family": "geometric", "gamma": 0.5}) == Geometric(0.5)
    assert kdist.mean(kdist.from_json({"family": "logarithmic", "mean": 10})) == pytest.approx(10, rel=1e-10)


def test_sample_many_mean():
    rng = np.random.default_rng(3)
    for d in (Geometric(0.2), Poisson(4.0), TruncatedNegativeBinomial(2.0, 0.3)):
        ks = kdist.sample_many(d, rng, 200_000)
        sd = math.sqrt(float(np.sum(kdist.series_pmf(d) * (np.arange(len(kdist.series_pmf(d))) - kdist.mean(d)) ** 2)))
        assert abs(ks.mean() - kdist.mean(d)) < 5 * sd / math.sqrt(len(ks))


def test_sampling_is_seeded():
    d = Logarithmic(1e-6)
    a = kdist.sample_many(d, np.random.default_rng(9), 1000)
    b = kdist.sample_many(d, np.random.default_rng(9), 1000)
    assert np.array_equal(a, b) and a.min() >= 1


# ---------------------------------------------------------------------------
# properties

etas = st.floats(-0.9, 3.0)
gammas = st.floats(1e-3, 0.95)


@given(etas, gammas)
def test_tnb_pgf_at_one_and_mean(eta, gamma):
    d = TruncatedNegativeBinomial(eta, gamma)
    assert kdist.pgf(d, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert kdist.pgf(d, 0.0) == 0.0
    assert kdist.pgf_derivative(d, 1.0) == pytest.approx(kdist.mean(d), rel=1e-9)


@given(etas, gammas)
def test_series_sums_to_one_and_matches_pmf(eta, gamma):
    d = TruncatedNegativeBinomial(eta, gamma)
    w = kdist.series_pmf(d)
    assert math.fsum(w) == pytest.approx(1.0, abs=1e-9)
    for k in (1, 2, 5):
        assert w[k] == pytest.approx(kdist.pmf(d, k), rel=1e-10, abs=1e-300)


@given(etas, st.floats(1.5, 500.0))
def test_tnb_with_mean_hits_target(eta, m):
    assert kdist.mean(kdist.tnb_with_mean(eta, m)) == pytest.approx(m, rel=1e-8)


@given(st.floats(0.01, 50.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_pgf_monotone_poisson(mu, x, y):
    lo, hi = sorted((x, y))
    d = Poisson(mu)
    assert kdist.pgf(d, lo) <= kdist.pgf(d, hi) + 1e-15


@given(st.one_of(
    st.builds(TruncatedNegativeBinomial, etas, gammas),
    st.builds(Poisson, st.floats(0.05, 40.0)),
    st.builds(PointMass, st.integers(1, 30)),
), st.floats(0.05, 1.0), st.floats(0.0, 1.0))
def test_tilt_pgf_identity(d, s, x):
    t = kdist.tilt(d, s)
    expect = kdist.pgf(d, x * s) / kdist.pgf(d, s)
    if isinstance(d, PointMass):
        expect = kdist.pgf(d, x)
    assert kdist.pgf(t, x) == pytest.approx(expect, rel=1e-9, abs=1e-14)


@given(st.builds(Poisson, st.floats(0.1, 30.0)), st.integers(1, 60))
def test_tail_bound_dominates_true_tail(d, k):
    w = kdist.series_pmf(d)
    true_tail = math.fsum(w[k:]) if k < len(w) else 0.0
    assert kdist.tail_bound(d, k) >= true_tail - 1e-12


@given(st.builds(TruncatedNegativeBinomial, etas, st.floats(0.01, 0.9)), st.integers(1, 40))
def test_truncation_preserves_relative_weights(inner, m):
    t = Truncated(inner, m)
    w = kdist.series_pmf(t)
    assert math.fsum(w) == pytest.approx(1.0, abs=1e-12)
    head = np.array([kdist.pmf(inner, k) for k in range(m + 1)])
    np.testing.assert_allclose(w[: m + 1], head / head.sum(), rtol=1e-9, atol=1e-300)
