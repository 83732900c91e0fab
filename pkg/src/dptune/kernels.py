"""Backend selection for the numeric hot loops.

The compiled module ``dptune._ckernels`` is used when it was built; otherwise
(or when the environment variable ``DPTUNE_PURE_PYTHON`` is set to a
non-empty value) the numpy implementation in ``dptune._kernels_py`` is used.
Both return the same results; ``best_of_k`` agrees exactly.

Kernels:

``feasible_lower(q, orders, limits, iters=64)``
    For each q, a value a <= lo(q), where lo(q) is the smallest q' such that
    the Bernoulli pair (q, q') satisfies every constraint: for finite order
    o, log sum p^o p'^(1-o) <= limit in both directions; for o = inf, every
    log-ratio <= limit. Bisection keeps a on the infeasible side.

``best_of_k(cdf, ks, u)``
    Trial t consumes ks[t] uniforms from u (in order), maps each to an
    outcome by inverse CDF, and reports the smallest (most preferred) index;
    trials with k = 0 report len(cdf).

``max_law(pmf_k, w_le, w_lt)``
    sum_k pmf_k[k] * (w_le^k - w_lt^k) for each outcome, by explicit powers.
"""

import os

from dptune import _kernels_py

if os.environ.get("DPTUNE_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from dptune import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

feasible_lower = _impl.feasible_lower
best_of_k = _impl.best_of_k
max_law = _impl.max_law

__all__ = ["BACKEND", "feasible_lower", "best_of_k", "max_law"]
