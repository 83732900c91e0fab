import json
import math

import pytest
from hypothesis import assume, given, strategies as st

from dptune import accountant as acc
from dptune import kdist
from dptune.accountant import ApproxDp, PureDp, RdpTable, ZCdp
from dptune.errors import (DomainError, InapplicableOrderError, InfeasibleError, ParameterError,
                           PreconditionError, UnsupportedGuaranteeError)
from dptune.kdist import Geometric, Logarithmic, PointMass, Poisson, Truncated, TruncatedNegativeBinomial

# reference values from tools/derive_frozen_values.py


def test_tnb_formula_reference():
    assert acc.tnb_formula(0.5, 0.3, 0.5, 0.1, 4, 2) == pytest.approx(3.0800080880263494, rel=1e-13)


@pytest.mark.parametrize("lam, ref", [(8, 3.9723376249072007), (2, 3.9716842546490672)])
def test_tnb_zcdp_reference(lam, ref):
    assert acc.bound_tnb_zcdp(0.1, 1.0, 0.01, lam) == pytest.approx(ref, rel=1e-12)
    assert acc.bound_tnb(ZCdp(0.1), 1.0, 0.01, lam).epsilon == pytest.approx(ref, rel=1e-12)


def test_poisson_reference():
    assert acc.bound_poisson(1.0, 0.2, 1e-3, 10.0, 4) == pytest.approx(1.7775283643313486, rel=1e-13)


def test_poisson_below_one_counts_the_empty_output():
    assert acc.bound_poisson(0.5, 0.2, 1e-3, 0.5, 3) == pytest.approx(0.33826274997872423, rel=1e-12)


def test_point_mass_references():
    assert acc.bound_point_mass(ZCdp(0.1), 3, 4) == pytest.approx(1.5662040962227032, rel=1e-13)
    assert acc.lower_bound_point_mass(1.0, 3, 4) == pytest.approx(2.6867383124817772, rel=1e-13)
    assert acc.lower_bound_point_mass(1.0, 3, math.inf) == 3.0


def test_zcdp_conversion_reference():
    assert acc.rdp_to_approx_dp(ZCdp(0.1), 1e-6) == pytest.approx(2.1419389283854737, rel=1e-10)


def test_approx_poisson_reference():
    eps, delta, lam_max = acc.approx_poisson(0.1, 1e-6, 10.0)
    assert eps == pytest.approx(0.34216498817748425, rel=1e-13)
    assert delta == pytest.approx(9.9999500001666663e-6, rel=1e-12)
    assert lam_max == pytest.approx(10.50833194477505, rel=1e-13)


def test_approx_poisson_without_delta_reuses_the_poisson_bound():
    eps, delta, lam_max = acc.approx_poisson(0.1, 0.0, 10.0)
    assert delta == 0.0
    assert eps == acc.bound_poisson(0.1, 0.1, 0.0, 10.0, 1.0 + 1.0 / math.expm1(0.1))


def test_pure_dp_tnb_curve_at_infinity():
    for eta, expect in ((1.0, 3.0), (0.0, 2.0), (0.5, 2.5)):
        tb = acc.tuning_bound(TruncatedNegativeBinomial(eta, 0.5), PureDp(1.0), [2, 8, math.inf])
        assert tb.epsilon_at(math.inf) == pytest.approx(expect, abs=1e-12)
        assert tb.points[-1].rule == "tnb_pure_dp"


def test_point_mass_of_one_is_the_base():
    tb = acc.tuning_bound(PointMass(1), ZCdp(0.2), [2, 4, 8])
    assert [p.epsilon for p in tb.points] == pytest.approx([0.4, 0.8, 1.6])
    assert {p.rule for p in tb.points} == {"base"}


def test_conditional_max_divergence_preset():
    bp = acc.conditional_bound(PureDp(0.7), PureDp(0.7), 0.3, 4.0, holder=1)
    assert bp.epsilon == pytest.approx(1.4)
    assert acc.conditional_bound(PureDp(0.7), PureDp(0.7), 0.3, math.inf).epsilon == pytest.approx(1.4)


def test_auto_holder_never_worse_than_presets():
    f, b = ZCdp(0.05), ZCdp(0.05)
    auto = acc.conditional_bound(f, b, 0.2, 6.0).epsilon
    for preset in (1, 2, 3, 4, 5):
        assert auto <= acc.conditional_bound(f, b, 0.2, 6.0, holder=preset).epsilon + 1e-12


def test_holder_exponents_checked():
    with pytest.raises(ParameterError):
        acc.holder_bound(PureDp(1), PureDp(1), 0.5, 3.0, 2.0, 2.0, 2.0)


def test_preconditions_and_domains():
    with pytest.raises(PreconditionError):
        acc.bound_tnb_zcdp(5.0, 1.0, 0.5, 4)
    with pytest.raises(InapplicableOrderError):
        acc.bound_poisson(1.0, 1.0, 0.0, 10.0, 4.0)
    with pytest.raises(DomainError):
        acc.bound_tnb(PureDp(1.0), 1.0, 0.5, 1.0)
    with pytest.raises(UnsupportedGuaranteeError):
        acc.bound_tnb(ApproxDp(1.0, 1e-6), 1.0, 0.5, 4.0)
    with pytest.raises(UnsupportedGuaranteeError):
        acc.eval_curve(ApproxDp(1.0, 1e-6), 4.0)
    with pytest.raises(InfeasibleError):
        acc.rdp_to_approx_dp(ZCdp(0.1, delta0=1e-3), 1e-4)
    with pytest.raises(ParameterError):
        RdpTable(((2.0, 1.0), (4.0, 0.5)))


def test_rdp_table_closure_and_lookup():
    t = RdpTable.closure([(4.0, 0.5), (2.0, 1.0), (math.inf, 2.0)])
    assert t.points == ((2.0, 0.5), (4.0, 0.5), (math.inf, 2.0))
    assert acc.eval_curve(t, 3.0) == 0.5
    assert acc.eval_curve(RdpTable(((2.0, 0.1),)), 3.0) == math.inf


def test_approx_repetition_failure_mass():
    dist = kdist.tnb_with_mean(1.0, 10.0)
    d0 = 1e-6
    tb = acc.tuning_bound(dist, ZCdp(0.01, delta0=d0), [2, 4, 8])
    assert tb.failure_mass == pytest.approx(1.0 - kdist.pgf(dist, 1.0 - d0), rel=1e-9)
    assert tb.failure_mass == pytest.approx(10 * d0, rel=1e-4)
    assert tb.method.endswith("+approx")


def test_conversion_attached():
    tb = acc.tuning_bound(Geometric(0.1), ZCdp(0.01), delta=1e-6)
    assert tb.approx_dp[1] == 1e-6
    assert tb.approx_dp[0] == pytest.approx(acc.rdp_to_approx_dp(tb.curve, 1e-6))


def test_truncated_curve_has_no_finite_max_divergence():
    tb = acc.tuning_bound(Truncated(Poisson(10.0), 10), ZCdp(0.01), [2, 4, math.inf])
    assert tb.epsilon_at(math.inf) == math.inf
    assert all(math.isfinite(p.epsilon) for p in tb.points[:-1])


def test_json_and_csv_outputs():
    tb = acc.tuning_bound(Logarithmic(0.01), ZCdp(0.1), [2, 8, math.inf], delta=1e-6)
    doc = json.loads(json.dumps(tb.to_json()))
    assert doc["points"][-1]["lambda"] == "inf"
    assert doc["approx_dp"]["delta"] == 1e-6
    lines = tb.to_csv().splitlines()
    assert lines[0] == "lambda,epsilon_prime,rule,lambda_hat"
    assert lines[-1].startswith(",") and "approx_dp(delta=1e-06)" in lines[-1]


# ---------------------------------------------------------------------------
# properties

curves = st.one_of(
    st.builds(PureDp, st.floats(0.0, 5.0)),
    st.builds(ZCdp, st.floats(0.0, 2.0)),
    st.builds(ApproxDp, st.floats(0.0, 5.0), st.floats(0.0, 0.5)),
    st.lists(st.tuples(st.floats(1.01, 1e4), st.floats(0.0, 10.0)), min_size=1, max_size=6).map(RdpTable.closure),
)


@given(curves)
def test_curve_json_round_trip(curve):
    assert acc.curve_from_json(json.loads(json.dumps(acc.curve_to_json(curve)))) == curve


dists = st.one_of(
    st.builds(TruncatedNegativeBinomial, st.floats(-0.9, 3.0), st.floats(1e-4, 0.9)),
    st.builds(Poisson, st.floats(0.1, 200.0)),
    st.builds(PointMass, st.integers(1, 20)),
)


@given(dists, st.floats(1e-3, 0.5))
def test_tuning_curve_is_monotone(dist, rho):
    tb = acc.tuning_bound(dist, ZCdp(rho), [1.5, 2, 3, 4, 8, 16, 32, 64])
    eps = [p.epsilon for p in tb.points]
    assert all(a <= b for a, b in zip(eps, eps[1:]))
    assert all(e >= 0 for e in eps)


@given(st.floats(1e-3, 1.0), st.floats(-0.9, 3.0), st.floats(1e-6, 0.9), st.floats(1.1, 500.0))
def test_tnb_zcdp_closed_form_matches_numeric(rho, eta, gamma, lam):
    assume(rho <= -math.log(gamma))
    closed = acc.bound_tnb_zcdp(rho, eta, gamma, lam)
    numeric = acc.bound_tnb(ZCdp(rho), eta, gamma, lam).epsilon
    assert numeric >= closed - 1e-9 * max(1.0, closed)
    assert numeric <= closed + 1e-6 * max(1.0, closed)


@given(curves.filter(lambda c: not isinstance(c, ApproxDp)), st.floats(1e-10, 1e-2), st.floats(1.5, 100.0))
def test_conversion_monotone_in_delta(curve, d, factor):
    assume(d * factor < 0.5)
    assert acc.rdp_to_approx_dp(curve, d * factor) <= acc.rdp_to_approx_dp(curve, d) + 1e-12


@given(st.floats(0.0, 5.0), st.floats(-0.9, 5.0))
def test_pure_bound_linear(eps, eta):
    assert acc.bound_tnb_pure(eps, eta) == pytest.approx((2.0 + eta) * eps)


@given(st.floats(1e-6, 3.0), st.integers(1, 30), st.floats(1.01, 1e3))
def test_point_mass_sandwich_formulas(eps, k, lam):
    assert acc.lower_bound_point_mass(eps, k, lam) <= acc.bound_point_mass(PureDp(eps), k, lam) + 1e-12


@given(st.floats(0.01, 2.0), st.floats(0.01, 1.0), st.floats(1.5, 64.0))
def test_conditional_bound_decreases_with_larger_acceptance(rho, qs, lam):
    lo = acc.conditional_bound(ZCdp(rho), ZCdp(rho), qs, lam).epsilon
    hi = acc.conditional_bound(ZCdp(rho), ZCdp(rho), min(1.0, qs * 2), lam).epsilon
    assert hi <= lo + 1e-12
