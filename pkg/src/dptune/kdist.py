"""Distributions of the repetition count K.

Four families are supported: a point mass, the truncated negative binomial
TNB(eta, gamma) (which contains the geometric, eta=1, and logarithmic,
eta=0, distributions), Poisson(mu), and the truncation of any of these to
{0, ..., limit}. Distributions are immutable, hashable values; every
operation is a pure function of the distribution and (for sampling) an
explicit ``numpy.random.Generator``.

All PGFs and derivatives accept scalars or numpy arrays.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from typing import Any, Union

import numpy as np
from scipy import optimize, special

from dptune.errors import DomainError, ParameterError

# Below this |eta| the logarithmic branch is used to avoid cancellation.
LOG_BRANCH_ETA = 1e-7
SERIES_RESIDUAL = 1e-12
# Largest cached PMF table; heavier tails switch to family-specific samplers.
TABLE_CAP = 1 << 22
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# Beyond this k the lgamma difference loses digits to cancellation.
_STIRLING_FROM = 64.0


def _stirling_tail(x):
    x2 = 1.0 / (x * x)
    return (1.0 / 12.0 - x2 * (1.0 / 360.0 - x2 * (1.0 / 1260.0 - x2 / 1680.0))) / x


def log_gamma_ratio(k, a: float):
    """log(Gamma(k + a) / Gamma(k)) for k >= 1, accurate for large k."""
    k = np.asarray(k, dtype=float)
    out = np.empty(k.shape)
    small = k < _STIRLING_FROM
    ks = k[small]
    out[small] = special.gammaln(ks + a) - special.gammaln(ks)
    kb = k[~small]
    out[~small] = (a * np.log(kb) + (kb + a - 0.5) * np.log1p(a / kb) - a
                   + _stirling_tail(kb + a) - _stirling_tail(kb))
    return out


def _as_output(x, value):
    if np.ndim(x) == 0:
        return float(value)
    return value


@dataclasses.dataclass(frozen=True)
class PointMass:
    """K = k with probability one."""

    k: int

    def __post_init__(self):
        k = self.k
        if isinstance(k, bool) or not float(k).is_integer() or k < 1:
            raise ParameterError(f"point mass needs an integer k >= 1, got {k!r}")
        object.__setattr__(self, "k", int(k))

    def pmf_array(self, ks) -> np.ndarray:
        ks = np.asarray(ks)
        return (ks == self.k).astype(float)

    def mean(self) -> float:
        return float(self.k)

    def pgf(self, x):
        x = np.asarray(x, dtype=float)
        return _as_output(x, np.power(x, self.k))

    def pgf_derivative(self, x):
        x = np.asarray(x, dtype=float)
        return _as_output(x, self.k * np.power(x, self.k - 1))

    @property
    def x_max(self) -> float:
        return math.inf

    @property
    def max_support(self) -> int | None:
        return self.k


@dataclasses.dataclass(frozen=True)
class TruncatedNegativeBinomial:
    """TNB(eta, gamma) on {1, 2, ...}.

    Pr[K=k] is proportional to (1-gamma)^k * prod_{l<k} (l+eta)/(l+1).
    eta=1 is the geometric law and eta=0 the logarithmic law.
    """

    eta: float
    gamma: float

    def __post_init__(self):
        eta, gamma = float(self.eta), float(self.gamma)
        if not (math.isfinite(eta) and eta > -1.0):
            raise ParameterError(f"eta must be a finite real > -1, got {self.eta!r}")
        if not 0.0 < gamma < 1.0:
            raise ParameterError(f"gamma must lie in (0, 1), got {self.gamma!r}")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def is_logarithmic(self) -> bool:
        return abs(self.eta) < LOG_BRANCH_ETA

    def _log_norm(self) -> float:
        # log of eta / (gamma^-eta - 1), or of 1/log(1/gamma) in the limit
        log_inv_gamma = -math.log(self.gamma)
        if self.is_logarithmic:
            return -math.log(log_inv_gamma)
        return math.log(self.eta / math.expm1(self.eta * log_inv_gamma))

    def pmf_array(self, ks) -> np.ndarray:
        ks = np.asarray(ks, dtype=float)
        out = np.zeros(ks.shape)
        pos = ks >= 1
        k = ks[pos]
        logp = k * math.log1p(-self.gamma) - np.log(k) + self._log_norm()
        if not self.is_logarithmic:
            eta = self.eta
            logp = logp + log_gamma_ratio(k, eta) - special.gammaln(1.0 + eta)
        out[pos] = np.exp(logp)
        return out

    def mean(self) -> float:
        g = self.gamma
        if self.is_logarithmic:
            return (1.0 / g - 1.0) / -math.log(g)
        return self.eta * (1.0 - g) / (g * -math.expm1(self.eta * math.log(g)))

    @property
    def x_max(self) -> float:
        return 1.0 / (1.0 - self.gamma)

    @property
    def max_support(self) -> int | None:
        return None

    def _check(self, x: np.ndarray) -> None:
        ax = np.abs(x)
        if np.any(~np.isfinite(x)) or np.any((ax > 1.0) & (ax * (1.0 - self.gamma) >= 1.0)):
            raise DomainError(f"PGF argument outside |x| < {self.x_max:.6g}")

    def _log_base(self, x: np.ndarray) -> np.ndarray:
        # log(1 - (1-gamma) x); near x = 1 as log((1-x) + gamma x), since 1-x is exact there
        with np.errstate(divide="ignore"):
            near = np.log((1.0 - np.maximum(x, 0.5)) + self.gamma * x)
            return np.where(x >= 0.5, near, np.log1p(-(1.0 - self.gamma) * np.minimum(x, 0.5)))

    def pgf(self, x):
        x = np.asarray(x, dtype=float)
        self._check(x)
        y = self._log_base(x)
        log_g = math.log(self.gamma)
        if self.is_logarithmic:
            val = y / log_g
        else:
            val = np.expm1(-self.eta * y) / math.expm1(-self.eta * log_g)
        return _as_output(x, val)

    def pgf_derivative(self, x):
        x = np.asarray(x, dtype=float)
        self._check(x)
        y = self._log_base(x)
        e1 = self.eta + 1.0
        val = np.exp(-e1 * y + e1 * math.log(self.gamma)) * self.mean()
        return _as_output(x, val)


@dataclasses.dataclass(frozen=True)
class Poisson:
    """Poisson(mu); note Pr[K=0] = exp(-mu) > 0."""

    mu: float

    def __post_init__(self):
        mu = float(self.mu)
        if not (math.isfinite(mu) and mu > 0.0):
            raise ParameterError(f"mu must be a finite real > 0, got {self.mu!r}")
        object.__setattr__(self, "mu", mu)

    def pmf_array(self, ks) -> np.ndarray:
        ks = np.asarray(ks, dtype=float)
        out = np.zeros(ks.shape)
        ok = ks >= 0
        k = ks[ok]
        out[ok] = np.exp(-self.mu + k * math.log(self.mu) - special.gammaln(k + 1.0))
        return out

    def mean(self) -> float:
        return self.mu

    def pgf(self, x):
        x = np.asarray(x, dtype=float)
        return _as_output(x, np.exp(self.mu * (x - 1.0)))

    def pgf_derivative(self, x):
        x = np.asarray(x, dtype=float)
        return _as_output(x, self.mu * np.exp(self.mu * (x - 1.0)))

    @property
    def x_max(self) -> float:
        return math.inf

    @property
    def max_support(self) -> int | None:
        return None


@dataclasses.dataclass(frozen=True)
class Truncated:
    """The law of ``inner`` conditioned on K <= limit."""

    inner: "RepetitionDistribution"
    limit: int

    def __post_init__(self):
        m = self.limit
        if isinstance(m, bool) or not float(m).is_integer() or m < 1:
            raise ParameterError(f"truncation limit must be an integer >= 1, got {m!r}")
        object.__setattr__(self, "limit", int(m))
        if not isinstance(self.inner, _FAMILIES):
            raise ParameterError(f"unknown inner distribution {self.inner!r}")
        if _raw_weights(self.inner, int(m)).sum() <= 0.0:
            raise ParameterError("inner distribution has no mass on {0..limit}")

    @functools.cached_property
    def weights(self) -> np.ndarray:
        w = _raw_weights(self.inner, self.limit)
        w = w / w.sum()
        w.setflags(write=False)
        return w

    def pmf_array(self, ks) -> np.ndarray:
        ks = np.asarray(ks)
        out = np.zeros(ks.shape)
        ok = (ks >= 0) & (ks <= self.limit)
        out[ok] = self.weights[ks[ok].astype(int)]
        return out

    def mean(self) -> float:
        w = self.weights
        return float(math.fsum(np.arange(len(w)) * w))

    def pgf(self, x):
        x = np.asarray(x, dtype=float)
        return _as_output(x, np.polynomial.polynomial.polyval(x, self.weights))

    def pgf_derivative(self, x):
        x = np.asarray(x, dtype=float)
        w = self.weights
        coeffs = w[1:] * np.arange(1, len(w))
        return _as_output(x, np.polynomial.polynomial.polyval(x, coeffs))

    @property
    def x_max(self) -> float:
        return math.inf

    @property
    def max_support(self) -> int | None:
        return self.limit


RepetitionDistribution = Union[PointMass, TruncatedNegativeBinomial, Poisson, Truncated]
_FAMILIES = (PointMass, TruncatedNegativeBinomial, Poisson, Truncated)


@functools.lru_cache(maxsize=256)
def _raw_weights(dist, m: int) -> np.ndarray:
    w = dist.pmf_array(np.arange(m + 1))
    w.setflags(write=False)
    return w


def Geometric(gamma: float) -> TruncatedNegativeBinomial:
    """Pr[K=k] = gamma (1-gamma)^(k-1); mean 1/gamma."""
    return TruncatedNegativeBinomial(1.0, gamma)


def Logarithmic(gamma: float) -> TruncatedNegativeBinomial:
    """Pr[K=k] = (1-gamma)^k / (k log(1/gamma))."""
    return TruncatedNegativeBinomial(0.0, gamma)


def tnb_with_mean(eta: float, target_mean: float) -> TruncatedNegativeBinomial:
    """Return the TNB(eta, gamma) whose mean equals ``target_mean`` (> 1)."""
    if not target_mean > 1.0:
        raise ParameterError(f"TNB means exceed 1, got {target_mean!r}")
    TruncatedNegativeBinomial(eta, 0.5)  # validates eta

    def gap(v):
        gamma = math.exp(-math.exp(v))
        return math.log(TruncatedNegativeBinomial(eta, gamma).mean()) - math.log(target_mean)

    # v = log log(1/gamma); the mean is increasing in v
    lo, hi = -30.0, 6.5
    if gap(hi) < 0:
        raise ParameterError(f"mean {target_mean} is out of the representable range")
    v = optimize.brentq(gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return TruncatedNegativeBinomial(eta, math.exp(-math.exp(v)))


# ---------------------------------------------------------------------------
# Function-style API


def _check_dist(dist) -> None:
    if not isinstance(dist, _FAMILIES):
        raise ParameterError(f"not a repetition distribution: {dist!r}")


def pmf(dist: RepetitionDistribution, k: int) -> float:
    """Pr[K = k]."""
    _check_dist(dist)
    if k < 0:
        raise DomainError(f"k must be non-negative, got {k}")
    return float(dist.pmf_array(np.array([k]))[0])


def mean(dist: RepetitionDistribution) -> float:
    _check_dist(dist)
    return dist.mean()


def pgf(dist: RepetitionDistribution, x):
    """f(x) = E[x^K]."""
    _check_dist(dist)
    return dist.pgf(x)


def pgf_derivative(dist: RepetitionDistribution, x):
    """f'(x) = E[K x^(K-1)]."""
    _check_dist(dist)
    return dist.pgf_derivative(x)


def min_positive_support(dist: RepetitionDistribution) -> int:
    """Smallest k >= 1 with Pr[K=k] > 0."""
    if isinstance(dist, PointMass):
        return dist.k
    if isinstance(dist, Truncated):
        nz = np.nonzero(dist.weights[1:])[0]
        if len(nz) == 0:
            raise ParameterError("distribution is concentrated on K=0")
        return int(nz[0]) + 1
    return 1


# ---------------------------------------------------------------------------
# Series tables


@dataclasses.dataclass(frozen=True)
class _Table:
    pmf: np.ndarray
    cdf: np.ndarray
    complete: bool


@functools.lru_cache(maxsize=64)
def _table(dist) -> _Table:
    if dist.max_support is not None:
        w = dist.pmf_array(np.arange(dist.max_support + 1))
        cdf = np.cumsum(w)
        return _Table(w, cdf, True)
    chunks = []
    total = 0.0
    start, size = 0, 4096
    m = dist.mean()
    complete = False
    while start < TABLE_CAP:
        stop = min(start + size, TABLE_CAP)
        w = dist.pmf_array(np.arange(start, stop))
        chunks.append(w)
        total += math.fsum(w)
        start = stop
        size *= 2
        if 1.0 - total < SERIES_RESIDUAL and start > m:
            complete = True
            break
    w = np.concatenate(chunks)
    cdf = np.cumsum(w)
    w.setflags(write=False)
    cdf.setflags(write=False)
    return _Table(w, cdf, complete)


def series_pmf(dist: RepetitionDistribution) -> np.ndarray:
    """PMF on {0..N} where N is the first index with residual mass < 1e-12.

    Raises ``ParameterError`` for tails too heavy to tabulate.
    """
    _check_dist(dist)
    t = _table(dist)
    if not t.complete:
        raise ParameterError("tail too heavy to tabulate to the series cutoff")
    return t.pmf


# ---------------------------------------------------------------------------
# Sampling


def sample(dist: RepetitionDistribution, rng: np.random.Generator) -> int:
    """Draw one K."""
    return int(sample_many(dist, rng, 1)[0])


def sample_many(dist: RepetitionDistribution, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` iid copies of K as an int64 array.

    Inverse-CDF sampling against a cached PMF table; distributions whose
    table would exceed ``TABLE_CAP`` entries use exact family-specific
    samplers instead.
    """
    _check_dist(dist)
    if isinstance(dist, PointMass):
        return np.full(size, dist.k, dtype=np.int64)
    t = _table(dist)
    if not t.complete:
        return _sample_heavy_tnb(dist, rng, size)
    u = rng.random(size)
    if isinstance(dist, Truncated):
        u = u * t.cdf[-1]
    out = np.searchsorted(t.cdf, u, side="right").astype(np.int64)
    over = out >= len(t.cdf)
    if np.any(over):
        if dist.max_support is not None:
            out[over] = len(t.cdf) - 1
        else:
            out[over] = [_extend_inverse(dist, t, x) for x in u[over]]
    return out


def _extend_inverse(dist, t: _Table, u: float) -> int:
    # continue the series past the cached table for a rare large uniform
    acc = float(t.cdf[-1])
    k = len(t.cdf)
    while True:
        w = dist.pmf_array(np.arange(k, k + 4096))
        c = acc + np.cumsum(w)
        hit = np.nonzero(c > u)[0]
        if len(hit):
            return k + int(hit[0])
        if c[-1] == acc:  # no further mass representable
            return k + 4095
        acc = float(c[-1])
        k += 4096


def _sample_heavy_tnb(dist: TruncatedNegativeBinomial, rng, size: int) -> np.ndarray:
    eta, gamma = dist.eta, dist.gamma
    if dist.is_logarithmic:
        return rng.logseries(1.0 - gamma, size).astype(np.int64)
    out = np.empty(size, dtype=np.int64)
    filled = 0
    while filled < size:
        need = size - filled
        if eta > 0:
            draw = rng.negative_binomial(eta, gamma, size=2 * need + 16)
            draw = draw[draw > 0]
        else:
            draw = _sibuya_tilted(-eta, gamma, rng, 2 * need + 16)
        take = draw[:need]
        out[filled:filled + len(take)] = take
        filled += len(take)
    return out


def _sibuya_tilted(a: float, gamma: float, rng, n: int) -> np.ndarray:
    # Sibuya(a) by inverse survival, then accept with prob (1-gamma)^N.
    # TNB(-a, gamma) is exactly this exponential tilt.
    log_keep = math.log1p(-gamma)
    k_max = int(min(2 ** 62, math.ceil(-745.0 / log_keep)))
    log_u = np.log(rng.random(n))
    lg = special.gammaln(1.0 - a)

    def log_surv(k):
        return log_gamma_ratio(k + 1.0, -a) - lg

    lo = np.zeros(n)
    hi = np.full(n, float(k_max))
    alive = log_surv(hi) < log_u
    lo, hi, log_u = lo[alive], hi[alive], log_u[alive]
    while True:
        open_ = hi - lo > 1
        if not np.any(open_):
            break
        mid = np.floor((lo + hi) / 2)
        below = log_surv(mid) < log_u
        hi = np.where(open_ & below, mid, hi)
        lo = np.where(open_ & ~below, mid, lo)
    keep = rng.random(len(hi)) < np.exp(hi * log_keep)
    return hi[keep].astype(np.int64)


# ---------------------------------------------------------------------------
# Tail bound and truncation statistics


def _log_pgf_exp(dist, t: float) -> float:
    """log f(e^t) for t > 0 inside the convergence domain."""
    if isinstance(dist, PointMass):
        return dist.k * t
    if isinstance(dist, Poisson):
        return dist.mu * math.expm1(t)
    if isinstance(dist, Truncated):
        w = dist.weights
        nz = w > 0
        ks = np.arange(len(w))[nz]
        return float(special.logsumexp(np.log(w[nz]) + ks * t))
    y = math.log1p(-(1.0 - dist.gamma) * math.exp(t))
    log_g = math.log(dist.gamma)
    if dist.is_logarithmic:
        return math.log(y / log_g)
    return math.log(math.expm1(-dist.eta * y) / math.expm1(-dist.eta * log_g))


def tail_bound(dist: RepetitionDistribution, k: int) -> float:
    """Upper bound on Pr[K >= k] from min_t f(e^t) e^(-tk).

    The log-objective is convex in t, so golden-section search over
    (0, t_max] finds the minimum.
    """
    _check_dist(dist)
    if k <= 0:
        return 1.0
    if isinstance(dist, TruncatedNegativeBinomial):
        edge = dist.x_max - 1e-6
        if edge <= 1.0:
            return 1.0
        t_max = math.log(edge)
    else:
        t_max = 50.0

    def obj(t):
        return _log_pgf_exp(dist, t) - t * k

    a, b = 0.0, t_max
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = obj(c), obj(d)
    for _ in range(200):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = obj(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = obj(d)
        if b - a < 1e-13:
            break
    best = min(fc, fd, obj(t_max))
    return min(1.0, math.exp(best))


def truncation_stats(dist: RepetitionDistribution, limit: int) -> tuple[float, float]:
    """(Pr[K > m], E[K 1[K > m]]) for m = ``limit``.

    For infinite supports both are complements of finite head sums against
    the closed-form total mass and mean; if m lies beyond the tabulated
    series the result over-estimates both (conservative for bounds).
    """
    _check_dist(dist)
    if limit < 0:
        raise ParameterError(f"limit must be non-negative, got {limit}")
    if dist.max_support is not None and limit >= dist.max_support:
        return 0.0, 0.0
    pm = _table(dist).pmf
    head = pm[: limit + 1]
    ks = np.arange(len(head))
    tail_p = max(0.0, 1.0 - math.fsum(head))
    tail_e = max(0.0, dist.mean() - math.fsum(ks * head))
    return tail_p, tail_e


def tilt(dist: RepetitionDistribution, scale: float) -> RepetitionDistribution:
    """The law with Pr[K'=k] proportional to Pr[K=k] * scale^k.

    Its PGF is f(x * scale) / f(scale); each family is closed under this.
    """
    _check_dist(dist)
    if not 0.0 < scale <= 1.0:
        raise ParameterError(f"tilt scale must lie in (0, 1], got {scale}")
    if scale == 1.0:
        return dist
    if isinstance(dist, PointMass):
        return dist
    if isinstance(dist, Poisson):
        return Poisson(dist.mu * scale)
    if isinstance(dist, TruncatedNegativeBinomial):
        return TruncatedNegativeBinomial(dist.eta, 1.0 - (1.0 - dist.gamma) * scale)
    return Truncated(tilt(dist.inner, scale), dist.limit)


# ---------------------------------------------------------------------------
# JSON


def to_json(dist: RepetitionDistribution) -> dict[str, Any]:
    _check_dist(dist)
    if isinstance(dist, PointMass):
        return {"family": "point", "k": dist.k}
    if isinstance(dist, TruncatedNegativeBinomial):
        return {"family": "tnb", "eta": dist.eta, "gamma": dist.gamma}
    if isinstance(dist, Poisson):
        return {"family": "poisson", "mu": dist.mu}
    return {"family": "truncated", "limit": dist.limit, "inner": to_json(dist.inner)}


def from_json(obj: dict[str, Any]) -> RepetitionDistribution:
    """Parse a distribution object; accepts the geometric/logarithmic aliases."""
    if not isinstance(obj, dict) or "family" not in obj:
        raise ParameterError(f"distribution JSON needs a 'family' key: {obj!r}")
    fam = str(obj["family"]).lower()
    try:
        if fam == "point":
            return PointMass(obj["k"])
        if fam == "tnb":
            if "mean" in obj and "gamma" not in obj:
                return tnb_with_mean(float(obj["eta"]), float(obj["mean"]))
            return TruncatedNegativeBinomial(float(obj["eta"]), float(obj["gamma"]))
        if fam in ("geometric", "logarithmic"):
            eta = 1.0 if fam == "geometric" else 0.0
            if "mean" in obj and "gamma" not in obj:
                return tnb_with_mean(eta, float(obj["mean"]))
            return TruncatedNegativeBinomial(eta, float(obj["gamma"]))
        if fam == "poisson":
            return Poisson(float(obj["mu"]))
        if fam == "truncated":
            return Truncated(from_json(obj["inner"]), obj["limit"])
    except KeyError as exc:
        raise ParameterError(f"distribution '{fam}' is missing field {exc}") from None
    raise ParameterError(f"unknown distribution family {fam!r}")
