import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dptune import accountant, oracle
from dptune.errors import DegenerateSetError, DomainError, ValidationError
from dptune.kdist import Geometric, PointMass, Poisson, Truncated, TruncatedNegativeBinomial

# reference values from tools/derive_frozen_values.py


def test_max_law_reference():
    law = oracle.repeated_max_distribution([0.2, 0.5, 0.3], Geometric(0.5))
    np.testing.assert_allclose(law, [1 / 3, 0.49019607843137255, 0.17647058823529412], rtol=1e-13)


def test_randomized_response_references():
    pair = oracle.worst_case_point_mass(1.0)
    assert oracle.renyi_divergence(pair.p, pair.p_prime, 2) == pytest.approx(0.73532566405551922, rel=1e-13)
    a = oracle.repeated_max_distribution(pair.p, PointMass(3))
    b = oracle.repeated_max_distribution(pair.p_prime, PointMass(3))
    assert oracle.renyi_divergence(a, b, 4) == pytest.approx(2.6867537027736027, rel=1e-12)
    assert oracle.renyi_divergence(a, b, math.inf) == pytest.approx(3.0, abs=1e-12)


def test_conditional_triple_reference():
    s, t = oracle.solve_conditional_triple(4.0)
    assert s == pytest.approx(1.8199591048570388, rel=1e-8)
    assert t == pytest.approx(2.4196865459225598, rel=1e-8)
    pt = oracle.conditional_triple_point(4.0)
    assert pt["exact"] == pytest.approx(3.3297602304276043, rel=1e-8)
    assert pt["lower"] <= pt["exact"] <= pt["upper"]


def test_divergence_edge_cases():
    assert oracle.renyi_divergence([1.0, 0.0], [0.0, 1.0], 2) == math.inf
    assert oracle.renyi_divergence([0.0, 1.0], [0.5, 0.5], 2) == pytest.approx(math.log(2))
    kl = oracle.renyi_divergence([0.3, 0.7], [0.6, 0.4], 1)
    assert kl == pytest.approx(0.3 * math.log(0.5) + 0.7 * math.log(1.75))
    with pytest.raises(DomainError):
        oracle.renyi_divergence([0.5, 0.5], [0.5, 0.5], 0.5)
    with pytest.raises(ValidationError):
        oracle.renyi_divergence([0.5, 0.6], [0.5, 0.5], 2)


def test_empty_output_slot_for_poisson():
    law = oracle.repeated_max_distribution([0.5, 0.5], Poisson(1.0))
    assert len(law) == 3
    assert law[-1] == pytest.approx(math.exp(-1.0))
    assert law.sum() == pytest.approx(1.0, abs=1e-14)


def test_conditioning_helpers():
    pair, subset = oracle.worst_case_conditional(1.0, 0.5, 0.01)
    cond, qs, qps = oracle.conditioned_pair(pair, subset)
    assert qs == pytest.approx(2 * 0.01 * math.exp(-1.0))
    assert cond.p.sum() == pytest.approx(1.0)
    with pytest.raises(DegenerateSetError):
        oracle.conditioned_pair(oracle.FiniteMechanismPair([1.0, 0.0], [0.5, 0.5]), [1])


def test_corpus_size_and_kinds():
    full = oracle.corpus("full")
    assert len(full) >= 40
    assert {e.family for e in full} == {"rr", "triple", "random"}
    assert len(oracle.corpus("sandwich")) == 3
    with pytest.raises(ValidationError):
        oracle.corpus("nope")


def test_load_pair(tmp_path):
    path = tmp_path / "pair.json"
    path.write_text(json.dumps({"p": [0.25, 0.75], "p_prime": [0.5, 0.5]}))
    pair = oracle.load_pair(str(path))
    assert pair.support_size == 2
    path.write_text(json.dumps({"p": [0.25, 0.75]}))
    with pytest.raises(ValidationError):
        oracle.load_pair(str(path))


def test_monte_carlo_matches_exact_law():
    q = [0.1, 0.2, 0.3, 0.4]
    dist = TruncatedNegativeBinomial(0.5, 0.2)
    mc = oracle.monte_carlo_best_of_k(q, dist, 400_000, seed=5)
    assert oracle.tv_distance(mc, oracle.repeated_max_distribution(q, dist)) < 0.005


def test_monte_carlo_ignores_worker_count():
    q = [0.3, 0.7]
    a = oracle.monte_carlo_best_of_k(q, Poisson(2.0), 50_000, seed=1, workers=1)
    b = oracle.monte_carlo_best_of_k(q, Poisson(2.0), 50_000, seed=1, workers=4)
    np.testing.assert_array_equal(a, b)
    assert len(a) == 3


def test_soundness_rows_shape():
    rows = oracle.soundness_rows(oracle.corpus("rr")[:1], [PointMass(2), Geometric(0.5)], [2.0, 4.0])
    assert len(rows) == 4
    assert set(rows[0]) == set(oracle.SOUNDNESS_COLUMNS)
    assert all(r["slack"] >= -1e-9 for r in rows)


# ---------------------------------------------------------------------------
# properties

pmf_pairs = st.integers(2, 6).flatmap(lambda n: st.tuples(
    st.lists(st.floats(1e-3, 1.0), min_size=n, max_size=n),
    st.lists(st.floats(1e-3, 1.0), min_size=n, max_size=n),
)).map(lambda t: (np.asarray(t[0]) / np.sum(t[0]), np.asarray(t[1]) / np.sum(t[1])))

orders = st.floats(1.0, 200.0)

count_laws = st.one_of(
    st.builds(TruncatedNegativeBinomial, st.floats(-0.9, 3.0), st.floats(0.02, 0.95)),
    st.builds(Poisson, st.floats(0.05, 30.0)),
    st.builds(PointMass, st.integers(1, 25)),
    st.builds(Truncated, st.builds(Poisson, st.floats(0.5, 10.0)), st.integers(1, 12)),
)


@given(pmf_pairs, orders, orders)
def test_renyi_monotone_in_order(pq, a, b):
    p, q = pq
    lo, hi = sorted((a, b))
    assert oracle.renyi_divergence(p, q, lo) <= oracle.renyi_divergence(p, q, hi) + 1e-10


@given(pmf_pairs, orders)
def test_renyi_zero_on_equal_laws(pq, lam):
    p, _ = pq
    assert oracle.renyi_divergence(p, p, lam) == pytest.approx(0.0, abs=1e-12)


@given(pmf_pairs, orders, st.data())
def test_data_processing_under_merging(pq, lam, data):
    p, q = pq
    n = len(p)
    labels = data.draw(st.lists(st.integers(0, n - 2), min_size=n, max_size=n))
    merge = lambda v: np.bincount(labels, weights=v, minlength=n - 1)
    assert oracle.renyi_divergence(merge(p), merge(q), lam) <= oracle.renyi_divergence(p, q, lam) + 1e-10


@given(pmf_pairs, count_laws)
def test_pgf_law_matches_enumeration(pq, dist):
    p, _ = pq
    np.testing.assert_allclose(oracle.repeated_max_distribution(p, dist),
                               oracle.brute_force_max_distribution(p, dist), rtol=0, atol=1e-9)


@given(pmf_pairs, count_laws)
def test_repetition_law_is_a_pmf(pq, dist):
    law = oracle.repeated_max_distribution(pq[0], dist)
    assert np.all(law >= -1e-15) and law.sum() == pytest.approx(1.0, abs=1e-12)


@given(st.floats(0.05, 3.0), st.integers(1, 10), st.sampled_from([1.5, 2.0, 4.0, 16.0, math.inf]))
def test_randomized_response_sandwich(eps, k, lam):
    pair = oracle.worst_case_point_mass(eps)
    a = oracle.repeated_max_distribution(pair.p, PointMass(k))
    b = oracle.repeated_max_distribution(pair.p_prime, PointMass(k))
    exact = oracle.symmetric_divergence(a, b, lam)
    assert accountant.lower_bound_point_mass(eps, k, lam) <= exact + 1e-9
    assert exact <= accountant.bound_point_mass(accountant.PureDp(eps), k, lam) + 1e-9
