"""Numpy reference implementation of the hot kernels.

Semantics are shared with the compiled module ``dptune._ckernels``; see
``dptune.kernels`` for the contract of each function.
"""

import numpy as np


def _log_moment(p, pp, order):
    # log(p^o * pp^(1-o)) with 0^o = 0 on the p side and +inf when pp = 0 < p
    with np.errstate(divide="ignore", invalid="ignore"):
        val = order * np.log(p) + (1.0 - order) * np.log(pp)
    val = np.where(pp == 0.0, np.inf, val)
    return np.where(p == 0.0, -np.inf, val)


def _log_ratio(p, pp):
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.log(p) - np.log(pp)
    val = np.where(pp == 0.0, np.inf, val)
    return np.where(p == 0.0, -np.inf, val)


def _feasible(q, qq, orders, limits):
    ok = np.ones(np.shape(q), dtype=bool)
    for order, limit in zip(orders, limits):
        if np.isinf(order):
            worst = np.maximum.reduce([
                _log_ratio(q, qq), _log_ratio(1.0 - q, 1.0 - qq),
                _log_ratio(qq, q), _log_ratio(1.0 - qq, 1.0 - q),
            ])
            ok &= worst <= limit
        else:
            fwd = np.logaddexp(_log_moment(q, qq, order), _log_moment(1.0 - q, 1.0 - qq, order))
            bwd = np.logaddexp(_log_moment(qq, q, order), _log_moment(1.0 - qq, 1.0 - q, order))
            ok &= (fwd <= limit) & (bwd <= limit)
    return ok


def feasible_lower(q, orders, limits, iters=64):
    q = np.asarray(q, dtype=float)
    orders = np.asarray(orders, dtype=float)
    limits = np.asarray(limits, dtype=float)
    lo = np.zeros_like(q)
    hi = q.copy()
    zero_ok = _feasible(q, np.zeros_like(q), orders, limits)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        good = _feasible(q, mid, orders, limits)
        hi = np.where(good, mid, hi)
        lo = np.where(good, lo, mid)
    return np.where(zero_ok | (q == 0.0), 0.0, lo)


def best_of_k(cdf, ks, u):
    cdf = np.asarray(cdf, dtype=float)
    ks = np.asarray(ks, dtype=np.int64)
    u = np.asarray(u, dtype=float)
    n = len(cdf)
    out = np.full(len(ks), n, dtype=np.int64)
    if len(u) == 0:
        return out
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), n - 1)
    nonzero = ks > 0
    starts = np.concatenate(([0], np.cumsum(ks)[:-1]))[nonzero]
    out[nonzero] = np.minimum.reduceat(idx, starts)
    return out


def max_law(pmf_k, w_le, w_lt):
    pmf_k = np.asarray(pmf_k, dtype=float)
    ks = np.arange(len(pmf_k), dtype=float)
    out = np.empty(len(w_le))
    for i, (a, b) in enumerate(zip(w_le, w_lt)):
        out[i] = np.dot(pmf_k, np.power(a, ks) - np.power(b, ks))
    return out
