import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dptune import _kernels_py, kdist, kernels

try:
    from dptune import _ckernels
except ImportError:  # pragma: no cover - only without a compiler
    _ckernels = None

needs_compiled = pytest.mark.skipif(_ckernels is None, reason="compiled backend not built")


def pmfs(min_size=1, max_size=8):
    return st.lists(st.floats(1e-6, 1.0), min_size=min_size, max_size=max_size).map(
        lambda w: np.asarray(w) / np.sum(w))


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")


def test_pure_python_switch():
    env = dict(os.environ, DPTUNE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from dptune import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_best_of_k_small_case():
    cdf = np.array([0.2, 0.7, 1.0])
    ks = np.array([2, 0, 1, 3])
    u = np.array([0.9, 0.5, 0.1, 0.95, 0.75, 0.6])
    # trial 0: outcomes 2, 1 -> 1; trial 1: no runs -> 3; trial 2: 0; trial 3: 2, 2, 1 -> 1
    np.testing.assert_array_equal(_kernels_py.best_of_k(cdf, ks, u), [1, 3, 0, 1])


def test_max_law_point_mass():
    # three draws: Pr[best = y] = Q(>=y)^3 - Q(>y)^3
    q = np.array([0.2, 0.5, 0.3])
    ge = np.cumsum(q[::-1])[::-1]
    gt = np.append(ge[1:], 0.0)
    pmf_k = np.array([0.0, 0.0, 0.0, 1.0])
    np.testing.assert_allclose(_kernels_py.max_law(pmf_k, ge, gt), ge ** 3 - gt ** 3, rtol=1e-14)


def test_feasible_lower_is_infeasible_side():
    q = np.linspace(0.01, 0.99, 50)
    orders = np.array([2.0, np.inf])
    limits = np.array([0.1, 0.5])
    lo = _kernels_py.feasible_lower(q, orders, limits)
    assert np.all(lo <= q)
    assert not np.any(_kernels_py._feasible(q, lo, orders, limits) & (lo > 0))


@needs_compiled
@given(pmfs(), st.lists(st.integers(0, 6), min_size=1, max_size=40), st.integers(0, 2 ** 32 - 1))
def test_best_of_k_backends_agree(q, ks, seed):
    cdf = np.cumsum(q)
    cdf[-1] = 1.0
    ks = np.asarray(ks, dtype=np.int64)
    u = np.random.default_rng(seed).random(int(ks.sum()))
    np.testing.assert_array_equal(_ckernels.best_of_k(cdf, ks, u), _kernels_py.best_of_k(cdf, ks, u))


@needs_compiled
@given(pmfs(), st.floats(-0.9, 2.0), st.floats(0.02, 0.9))
def test_max_law_backends_agree(q, eta, gamma):
    pmf_k = kdist.series_pmf(kdist.TruncatedNegativeBinomial(eta, gamma))
    ge = np.cumsum(q[::-1])[::-1]
    gt = np.append(ge[1:], 0.0)
    np.testing.assert_allclose(_ckernels.max_law(pmf_k, ge, gt), _kernels_py.max_law(pmf_k, ge, gt),
                               rtol=1e-11, atol=1e-15)


@needs_compiled
@given(st.lists(st.floats(1e-4, 1.0), min_size=1, max_size=20),
       st.lists(st.sampled_from([1.5, 2.0, 4.0, 16.0, np.inf]), min_size=1, max_size=4, unique=True),
       st.floats(0.01, 2.0))
def test_feasible_lower_backends_agree(q, orders, scale):
    q = np.asarray(q)
    orders = np.asarray(orders)
    limits = scale * np.where(np.isinf(orders), 1.0, orders - 1.0)
    np.testing.assert_allclose(_ckernels.feasible_lower(q, orders, limits),
                               _kernels_py.feasible_lower(q, orders, limits), rtol=0, atol=1e-15)
