# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; same contract as ``dptune._kernels_py``."""

import numpy as np

from libc.math cimport INFINITY, exp, isinf, log, log1p


cdef inline double _moment(double lp, double lpp, double order) noexcept nogil:
    # log(p^o * pp^(1-o)) from log p and log pp; 0^o = 0 on the p side
    if lp == -INFINITY:
        return -INFINITY
    if lpp == -INFINITY:
        return INFINITY
    return order * lp + (1.0 - order) * lpp


cdef inline double _ratio(double lp, double lpp) noexcept nogil:
    if lp == -INFINITY:
        return -INFINITY
    if lpp == -INFINITY:
        return INFINITY
    return lp - lpp


cdef inline double _logaddexp(double a, double b) noexcept nogil:
    cdef double hi, lo
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a == INFINITY or b == INFINITY:
        return INFINITY
    hi = a if a > b else b
    lo = b if a > b else a
    return hi + log1p(exp(lo - hi))


cdef bint _feasible(double lq, double l1q, double qq, const double[:] orders,
                    const double[:] limits) noexcept nogil:
    # lq, l1q: log q and log(1 - q), fixed across the bisection
    cdef Py_ssize_t i
    cdef double o, lim
    cdef double lm = log(qq)
    cdef double l1m = log(1.0 - qq)
    for i in range(orders.shape[0]):
        o = orders[i]
        lim = limits[i]
        if isinf(o):
            if (_ratio(lq, lm) > lim or _ratio(l1q, l1m) > lim
                    or _ratio(lm, lq) > lim or _ratio(l1m, l1q) > lim):
                return False
        else:
            if _logaddexp(_moment(lq, lm, o), _moment(l1q, l1m, o)) > lim:
                return False
            if _logaddexp(_moment(lm, lq, o), _moment(l1m, l1q, o)) > lim:
                return False
    return True


def feasible_lower(q, orders, limits, int iters=64):
    cdef const double[:] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef const double[:] ov = np.ascontiguousarray(orders, dtype=np.float64)
    cdef const double[:] lv = np.ascontiguousarray(limits, dtype=np.float64)
    out = np.empty(qv.shape[0], dtype=np.float64)
    cdef double[:] res = out
    cdef Py_ssize_t i
    cdef int it
    cdef double a, b, mid, qi, lq, l1q
    with nogil:
        for i in range(qv.shape[0]):
            qi = qv[i]
            lq = log(qi)
            l1q = log(1.0 - qi)
            if qi == 0.0 or _feasible(lq, l1q, 0.0, ov, lv):
                res[i] = 0.0
                continue
            a = 0.0
            b = qi
            for it in range(iters):
                mid = 0.5 * (a + b)
                if _feasible(lq, l1q, mid, ov, lv):
                    b = mid
                else:
                    a = mid
            res[i] = a
    return out


def best_of_k(cdf, ks, u):
    cdef const double[:] c = np.ascontiguousarray(cdf, dtype=np.float64)
    cdef const long long[:] kv = np.ascontiguousarray(ks, dtype=np.int64)
    cdef const double[:] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0]
    out = np.empty(kv.shape[0], dtype=np.int64)
    cdef long long[:] res = out
    cdef Py_ssize_t t, j, pos = 0, lo, hi, mid
    cdef long long best
    cdef double x
    with nogil:
        for t in range(kv.shape[0]):
            best = n
            for j in range(kv[t]):
                x = uv[pos]
                pos += 1
                # first index with cdf > x
                lo = 0
                hi = n
                while lo < hi:
                    mid = (lo + hi) >> 1
                    if c[mid] > x:
                        hi = mid
                    else:
                        lo = mid + 1
                if lo > n - 1:
                    lo = n - 1
                if lo < best:
                    best = lo
            res[t] = best
    return out


def max_law(pmf_k, w_le, w_lt):
    cdef const double[:] pk = np.ascontiguousarray(pmf_k, dtype=np.float64)
    cdef const double[:] a = np.ascontiguousarray(w_le, dtype=np.float64)
    cdef const double[:] b = np.ascontiguousarray(w_lt, dtype=np.float64)
    out = np.empty(a.shape[0], dtype=np.float64)
    cdef double[:] res = out
    cdef Py_ssize_t i, k
    cdef double pa, pb, acc
    with nogil:
        for i in range(a.shape[0]):
            pa = 1.0
            pb = 1.0
            acc = 0.0
            for k in range(pk.shape[0]):
                acc += pk[k] * (pa - pb)
                pa *= a[i]
                pb *= b[i]
                # flush before the powers go subnormal (very slow, and < 1e-300 anyway)
                if pa < 1e-300:
                    pa = 0.0
                if pb < 1e-300:
                    pb = 0.0
                    if pa == 0.0:
                        break
            res[i] = acc
    return out
