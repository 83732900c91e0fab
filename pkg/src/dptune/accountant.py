"""Renyi-DP accounting for "run a private algorithm K times, keep the best".

A base algorithm's guarantee is a *privacy curve*: a map from Renyi order
lambda in (1, inf] to epsilon(lambda). This module turns a base curve plus a
repetition distribution into a certified curve for the repeated algorithm,
and converts curves to (epsilon, delta)-DP.

Orders are plain floats; ``LAMBDA_INF`` (``math.inf``) is the only way to ask
for the pure-DP limit. All logarithms are natural.
"""

from __future__ import annotations

import bisect
import csv
import dataclasses
import functools
import io
import math
from typing import Any, Iterable, Sequence, Union

import numpy as np
from scipy import optimize

from dptune import kdist, kernels
from dptune.errors import (
    DomainError,
    InapplicableOrderError,
    InfeasibleError,
    ParameterError,
    PreconditionError,
    UnsupportedGuaranteeError,
)
from dptune.kdist import PointMass, Poisson, RepetitionDistribution, Truncated, TruncatedNegativeBinomial

LAMBDA_INF = math.inf
STANDARD_LAMBDAS: tuple[float, ...] = tuple(float(x) for x in np.geomspace(1.25, 1024.0, 60)) + (LAMBDA_INF,)
# lambda-hat grid for the automatic choice in bound_tnb
_HAT_GRID: tuple[float, ...] = tuple(float(x) for x in np.geomspace(1.0, 1e4, 200))
# dense order grid for analytic curves in conversions
_DENSE_ORDERS = np.geomspace(1.0 + 1e-6, 1e6, 3000)
_GENERIC_RESOLUTION = 2001


def _check_prob(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ParameterError(f"{name} must lie in [0, 1], got {value}")
    return value


def _check_nonneg(name: str, value: float) -> float:
    value = float(value)
    if not (value >= 0.0 and math.isfinite(value)):
        raise ParameterError(f"{name} must be a finite real >= 0, got {value}")
    return value


def _check_order(lam: float, allow_inf: bool = True) -> float:
    lam = float(lam)
    if math.isnan(lam) or lam <= 1.0:
        raise DomainError(f"Renyi order must exceed 1, got {lam}")
    if math.isinf(lam) and not allow_inf:
        raise DomainError("this bound needs a finite Renyi order")
    return lam


# ---------------------------------------------------------------------------
# Privacy curves


@dataclasses.dataclass(frozen=True)
class PureDp:
    """epsilon-DP, i.e. (lambda, epsilon)-RDP at every order including inf."""

    epsilon: float
    delta0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "epsilon", _check_nonneg("epsilon", self.epsilon))
        object.__setattr__(self, "delta0", _check_prob("delta0", self.delta0))


@dataclasses.dataclass(frozen=True)
class ZCdp:
    """rho-zCDP: (lambda, rho * lambda)-RDP for all lambda > 1."""

    rho: float
    delta0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rho", _check_nonneg("rho", self.rho))
        object.__setattr__(self, "delta0", _check_prob("delta0", self.delta0))


@dataclasses.dataclass(frozen=True)
class RdpTable:
    """Tabulated (lambda, epsilon) points; lambda may include inf.

    Orders must be strictly increasing and epsilon non-decreasing, since a
    guarantee at a larger order implies the same value at every smaller one.
    Use ``RdpTable.closure`` to build a table from arbitrary points.
    """

    points: tuple[tuple[float, float], ...]
    delta0: float = 0.0

    def __post_init__(self):
        pts = tuple((float(lam), float(eps)) for lam, eps in self.points)
        if not pts:
            raise ParameterError("an RDP table needs at least one point")
        for lam, eps in pts:
            _check_order(lam)
            if math.isnan(eps) or eps < 0:
                raise ParameterError(f"epsilon must be >= 0, got {eps} at order {lam}")
        for (l0, e0), (l1, e1) in zip(pts, pts[1:]):
            if not l1 > l0:
                raise ParameterError("RDP table orders must be strictly increasing")
            if e1 < e0:
                raise ParameterError(
                    f"RDP table violates monotone closure: epsilon({l1}) = {e1} < epsilon({l0}) = {e0}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "delta0", _check_prob("delta0", self.delta0))

    @classmethod
    def closure(cls, points: Iterable[tuple[float, float]], delta0: float = 0.0) -> "RdpTable":
        """Sort points and replace each epsilon by the minimum over larger orders."""
        pts = sorted((float(l), float(e)) for l, e in points)
        merged: dict[float, float] = {}
        for lam, eps in pts:
            merged[lam] = min(eps, merged.get(lam, math.inf))
        out = []
        running = math.inf
        for lam in sorted(merged, reverse=True):
            running = min(running, merged[lam])
            out.append((lam, running))
        return cls(tuple(reversed(out)), delta0)

    @functools.cached_property
    def _orders(self) -> list[float]:
        return [lam for lam, _ in self.points]


@dataclasses.dataclass(frozen=True)
class ApproxDp:
    """(epsilon, delta)-DP, usable here only through its failure mass."""

    epsilon: float
    delta: float
    delta0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "epsilon", _check_nonneg("epsilon", self.epsilon))
        object.__setattr__(self, "delta", _check_prob("delta", self.delta))
        object.__setattr__(self, "delta0", _check_prob("delta0", self.delta0))


PrivacyCurve = Union[PureDp, ZCdp, RdpTable, ApproxDp]
_CURVES = (PureDp, ZCdp, RdpTable, ApproxDp)


def _check_curve(curve) -> None:
    if not isinstance(curve, _CURVES):
        raise ParameterError(f"not a privacy curve: {curve!r}")


def failure_mass(curve: PrivacyCurve) -> float:
    """Total delta-style failure probability carried by the curve."""
    _check_curve(curve)
    extra = curve.delta if isinstance(curve, ApproxDp) else 0.0
    return min(1.0, curve.delta0 + extra)


def delta_free(curve: PrivacyCurve) -> PrivacyCurve:
    """The curve with its failure mass removed.

    (epsilon, delta)-DP is a delta-approximate (inf, epsilon)-RDP guarantee,
    so its failure-free part is pure epsilon-DP.
    """
    _check_curve(curve)
    if isinstance(curve, ApproxDp):
        return PureDp(curve.epsilon)
    if curve.delta0 == 0.0:
        return curve
    return dataclasses.replace(curve, delta0=0.0)


def eval_curve(curve: PrivacyCurve, lam: float) -> float:
    """epsilon(lambda) for lambda in (1, inf].

    Tables return the value at the smallest tabulated order >= lambda, or inf
    when there is none. Failure mass is ignored here; ApproxDp with delta > 0
    has no Renyi form and is rejected.
    """
    _check_curve(curve)
    lam = _check_order(lam)
    if isinstance(curve, PureDp):
        return curve.epsilon
    if isinstance(curve, ZCdp):
        if math.isinf(lam):
            return 0.0 if curve.rho == 0.0 else math.inf
        return curve.rho * lam
    if isinstance(curve, RdpTable):
        i = bisect.bisect_left(curve._orders, lam)
        return curve.points[i][1] if i < len(curve.points) else math.inf
    if curve.delta > 0.0:
        raise UnsupportedGuaranteeError(
            "(epsilon, delta)-DP with delta > 0 has no Renyi form; use approx_repetition")
    return curve.epsilon


def _require_exact(curve: PrivacyCurve) -> None:
    _check_curve(curve)
    if failure_mass(curve) > 0.0:
        raise UnsupportedGuaranteeError(
            "base guarantee carries failure mass; use approx_repetition instead")


def _curve_orders(curve: PrivacyCurve) -> np.ndarray:
    if isinstance(curve, RdpTable):
        return np.array([l for l in curve._orders if math.isfinite(l)])
    return _DENSE_ORDERS


def _eval_many(curve: PrivacyCurve, orders: np.ndarray) -> np.ndarray:
    if isinstance(curve, ZCdp):
        return curve.rho * orders
    if isinstance(curve, (PureDp, ApproxDp)):
        return np.full(len(orders), eval_curve(curve, 2.0))
    return np.array([eval_curve(curve, o) for o in orders])


def curve_to_json(curve: PrivacyCurve) -> dict[str, Any]:
    _check_curve(curve)
    if isinstance(curve, PureDp):
        out = {"kind": "pure", "epsilon": curve.epsilon}
    elif isinstance(curve, ZCdp):
        out = {"kind": "zcdp", "rho": curve.rho}
    elif isinstance(curve, RdpTable):
        out = {"kind": "rdp_table", "points": [[_num(l), _num(e)] for l, e in curve.points]}
    else:
        out = {"kind": "approx_dp", "epsilon": curve.epsilon, "delta": curve.delta}
    if curve.delta0:
        out["delta0"] = curve.delta0
    return out


def curve_from_json(obj: dict[str, Any]) -> PrivacyCurve:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ParameterError(f"privacy curve JSON needs a 'kind' key: {obj!r}")
    kind = obj["kind"]
    d0 = float(obj.get("delta0", 0.0))
    try:
        if kind == "pure":
            return PureDp(float(obj["epsilon"]), d0)
        if kind == "zcdp":
            return ZCdp(float(obj["rho"]), d0)
        if kind == "rdp_table":
            return RdpTable(tuple((_unnum(l), _unnum(e)) for l, e in obj["points"]), d0)
        if kind == "approx_dp":
            return ApproxDp(float(obj["epsilon"]), float(obj["delta"]), d0)
    except KeyError as exc:
        raise ParameterError(f"privacy curve '{kind}' is missing field {exc}") from None
    raise ParameterError(f"unknown privacy curve kind {kind!r}")


def _num(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _unnum(x) -> float:
    if isinstance(x, str):
        return float(x)
    return float(x)


# ---------------------------------------------------------------------------
# Bound points and certified curves


@dataclasses.dataclass(frozen=True)
class BoundPoint:
    """One certified (lambda, epsilon') pair and how it was obtained.

    ``source_lam`` is the order whose bound was carried down to ``lam`` by
    monotone closure (equal to ``lam`` when no closure was needed).
    """

    lam: float
    epsilon: float
    rule: str
    lam_hat: float | None = None
    source_lam: float | None = None
    holder: tuple[float, float, float] | None = None

    def to_json(self) -> dict[str, Any]:
        out = {"lambda": _num(self.lam), "epsilon": _num(self.epsilon), "rule": self.rule}
        if self.lam_hat is not None:
            out["lambda_hat"] = _num(self.lam_hat)
        if self.source_lam is not None and self.source_lam != self.lam:
            out["source_lambda"] = _num(self.source_lam)
        if self.holder is not None:
            out["holder"] = [_num(v) for v in self.holder]
        return out


def _monotone_closure(points: Sequence[BoundPoint]) -> tuple[BoundPoint, ...]:
    out = []
    best: BoundPoint | None = None
    for pt in sorted(points, key=lambda p: p.lam, reverse=True):
        if best is None or pt.epsilon <= best.epsilon:
            best = pt
            out.append(pt)
        else:
            out.append(dataclasses.replace(
                best, lam=pt.lam, source_lam=best.source_lam if best.source_lam is not None else best.lam))
    return tuple(reversed(out))


@dataclasses.dataclass(frozen=True)
class TuningBound:
    """Certified Renyi curve of the repeated algorithm.

    ``failure_mass`` is the delta of a delta-approximate guarantee (0 for an
    exact one). ``approx_dp`` holds an optional (epsilon, delta) conversion.
    """

    points: tuple[BoundPoint, ...]
    distribution: RepetitionDistribution | None
    base: PrivacyCurve | None
    failure_mass: float = 0.0
    approx_dp: tuple[float, float] | None = None
    method: str = ""

    @property
    def curve(self) -> RdpTable:
        return RdpTable(tuple((p.lam, p.epsilon) for p in self.points), self.failure_mass)

    def epsilon_at(self, lam: float) -> float:
        return eval_curve(self.curve, lam)

    def to_json(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "distribution": None if self.distribution is None else kdist.to_json(self.distribution),
            "base": None if self.base is None else curve_to_json(self.base),
            "failure_mass": self.failure_mass,
            "approx_dp": None if self.approx_dp is None else
            {"epsilon": _num(self.approx_dp[0]), "delta": self.approx_dp[1]},
            "points": [p.to_json() for p in self.points],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "epsilon_prime", "rule", "lambda_hat"])
        for p in self.points:
            hat = "" if p.lam_hat is None else repr(float(p.lam_hat))
            w.writerow([repr(float(p.lam)), repr(float(p.epsilon)), p.rule, hat])
        if self.approx_dp is not None:
            # conversion row: lambda column left blank, delta in the rule tag
            w.writerow(["", repr(float(self.approx_dp[0])), f"approx_dp(delta={self.approx_dp[1]!r})", ""])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# Truncated negative binomial


def tnb_formula(epsilon: float, epsilon_hat: float, eta: float, gamma: float,
                lam: float, lam_hat: float) -> float:
    """Raw truncated-negative-binomial bound at fixed (lambda, lambda_hat).

    epsilon + (1+eta)(1-1/lam_hat) epsilon_hat + (1+eta) log(1/gamma)/lam_hat
    + log E[K]/(lam-1). lam_hat = 1 is the limit in which epsilon_hat drops
    out; lam = inf or lam_hat = inf take the obvious limits.
    """
    dist = TruncatedNegativeBinomial(eta, gamma)
    return epsilon + _hat_term(epsilon_hat, dist.eta, -math.log(dist.gamma), lam_hat) + \
        _order_term(math.log(dist.mean()), lam)


def _hat_term(eps_hat: float, eta: float, log_inv_gamma: float, lam_hat: float) -> float:
    if lam_hat == 1.0:
        return (1.0 + eta) * log_inv_gamma
    if math.isinf(eps_hat):
        return math.inf
    if math.isinf(lam_hat):
        return (1.0 + eta) * eps_hat
    return (1.0 + eta) * ((1.0 - 1.0 / lam_hat) * eps_hat + log_inv_gamma / lam_hat)


def _order_term(log_mean: float, lam: float) -> float:
    return 0.0 if math.isinf(lam) else log_mean / (lam - 1.0)


def _closure_orders(lam: float, extra: Iterable[float] = ()) -> list[float]:
    cands = {lam}
    cands.update(l for l in STANDARD_LAMBDAS if l > lam)
    cands.update(l for l in extra if l > lam)
    return sorted(cands)


def bound_tnb(base: PrivacyCurve, eta: float, gamma: float, lam: float,
              lam_hat: float | str = "auto", closure: bool = True) -> BoundPoint:
    """Renyi bound for K ~ TNB(eta, gamma) repetitions of ``base``.

    Args:
      base: the per-run guarantee (no failure mass).
      eta, gamma: TNB parameters.
      lam: target order in (1, inf].
      lam_hat: the auxiliary order, a number >= 1, or "auto" to minimize over
        a log grid on [1, 1e4], inf, and the zCDP optimum sqrt(log(1/gamma)/rho).
      closure: also use bounds at larger orders (the curve is monotone in
        lambda); the winning order is recorded as ``source_lam``.

    Returns:
      A ``BoundPoint`` tagged "tnb".
    """
    _require_exact(base)
    lam = _check_order(lam)
    dist = TruncatedNegativeBinomial(eta, gamma)
    log_inv_gamma = -math.log(dist.gamma)
    log_mean = math.log(dist.mean())

    if lam_hat == "auto":
        hats = set(_HAT_GRID)
        hats.add(LAMBDA_INF)
        if isinstance(base, ZCdp) and base.rho > 0:
            opt = math.sqrt(log_inv_gamma / base.rho)
            if opt >= 1.0:
                hats.add(opt)
        hats = sorted(hats)
    else:
        h = float(lam_hat)
        if math.isnan(h) or h < 1.0:
            raise ParameterError(f"lambda_hat must be >= 1, got {lam_hat!r}")
        hats = [h]
    hat_vals = [_hat_term(eval_curve(base, h) if h > 1.0 else 0.0, dist.eta, log_inv_gamma, h)
                for h in hats]
    ih = int(np.argmin(hat_vals))

    extra = []
    if isinstance(base, ZCdp) and base.rho > 0 and log_mean > 0:
        extra.append(1.0 + math.sqrt(log_mean / base.rho))
    orders = _closure_orders(lam, extra) if closure else [lam]
    vals = [eval_curve(base, o) + _order_term(log_mean, o) for o in orders]
    io_ = int(np.argmin(vals))
    total = vals[io_] + hat_vals[ih]
    return BoundPoint(lam, float(total), "tnb", lam_hat=hats[ih], source_lam=orders[io_])


def bound_tnb_pure(epsilon: float, eta: float) -> float:
    """Pure-DP bound (2 + eta) * epsilon for TNB repetition; gamma-free."""
    epsilon = _check_nonneg("epsilon", epsilon)
    if not eta > -1.0:
        raise ParameterError(f"eta must exceed -1, got {eta}")
    return (2.0 + eta) * epsilon


def bound_tnb_zcdp(rho: float, eta: float, gamma: float, lam: float) -> float:
    """Closed form for a rho-zCDP base; requires rho <= log(1/gamma).

    Below the split order 1 + sqrt(log E[K] / rho) the value is constant
    (the bound at the split order carries down by monotonicity).
    """
    rho = _check_nonneg("rho", rho)
    lam = _check_order(lam)
    dist = TruncatedNegativeBinomial(eta, gamma)
    log_inv_gamma = -math.log(dist.gamma)
    if rho > log_inv_gamma:
        raise PreconditionError(f"needs rho <= log(1/gamma) = {log_inv_gamma:.6g}, got rho = {rho}")
    log_mean = math.log(dist.mean())
    common = 2.0 * (1.0 + dist.eta) * math.sqrt(rho * log_inv_gamma) - dist.eta * rho
    if rho == 0.0:
        return common + _order_term(log_mean, lam)
    split = 1.0 + math.sqrt(log_mean / rho)
    if lam <= split:
        return 2.0 * math.sqrt(rho * log_mean) + common
    if math.isinf(lam):
        return math.inf
    return rho * (lam - 1.0) + log_mean / (lam - 1.0) + common


# ---------------------------------------------------------------------------
# Poisson


def _poisson_order_limit(lam: float) -> float:
    return 0.0 if math.isinf(lam) else math.log1p(1.0 / (lam - 1.0))


def bound_poisson(epsilon: float, epsilon_hat: float, delta_hat: float, mu: float, lam: float) -> float:
    """epsilon + mu * delta_hat + log(mu)/(lambda-1) for K ~ Poisson(mu).

    The base must be (lambda, epsilon)-RDP and (epsilon_hat, delta_hat)-DP
    with exp(epsilon_hat) <= 1 + 1/(lambda-1); violating that condition is
    an ``InapplicableOrderError`` (lower lambda instead).
    """
    lam = _check_order(lam)
    epsilon = float(epsilon)
    epsilon_hat = _check_nonneg("epsilon_hat", epsilon_hat)
    delta_hat = _check_prob("delta_hat", delta_hat)
    if not mu > 0:
        raise ParameterError(f"mu must be > 0, got {mu}")
    limit = _poisson_order_limit(lam)
    if epsilon_hat > limit * (1.0 + 1e-12) + 1e-15:
        raise InapplicableOrderError(
            f"exp(epsilon_hat) = exp({epsilon_hat:.6g}) exceeds 1 + 1/(lambda-1) at lambda = {lam:.6g}")
    value = epsilon + mu * delta_hat + _order_term(math.log(mu), lam)
    if mu < 1.0:
        # below mu = 1 the K = 0 atom is not negligible; add it back
        value = _with_zero_atom(value, math.exp(-mu), lam)
    return value


def _with_zero_atom(value: float, f0: float, lam: float) -> float:
    """Account for the K = 0 output, shared by both neighbours.

    The PGF bound controls the outputs of runs; the K = 0 output adds f(0)
    to the exponentiated divergence: log(f(0) + exp((lam-1) value))/(lam-1).
    """
    if f0 <= 0.0 or math.isinf(value):
        return value
    if math.isinf(lam):
        return max(value, 0.0)
    lm1 = lam - 1.0
    return float(np.logaddexp(math.log(f0), lm1 * value)) / lm1


def poisson_point(base: PrivacyCurve, mu: float, lam: float, closure: bool = True) -> BoundPoint:
    """Poisson bound at ``lam`` with the (epsilon_hat, delta_hat) pair derived from ``base``.

    At each order the largest admissible epsilon_hat = log(1 + 1/(lambda-1))
    is used, with delta_hat the smallest delta the base certifies there.
    """
    _require_exact(base)
    lam = _check_order(lam)
    best = None
    for o in (_closure_orders(lam) if closure else [lam]):
        if math.isinf(o):
            continue
        eps = eval_curve(base, o)
        eps_hat = _poisson_order_limit(o)
        val = bound_poisson(eps, eps_hat, curve_delta(base, eps_hat), mu, o)
        if best is None or val < best[0]:
            best = (val, o)
    if best is None:
        return BoundPoint(lam, math.inf, "poisson")
    return BoundPoint(lam, float(best[0]), "poisson", source_lam=best[1])


# ---------------------------------------------------------------------------
# Point mass


def bound_point_mass(base: PrivacyCurve, k: int, lam: float) -> float:
    """k * epsilon(lambda) + log(k)/(lambda-1) for exactly k runs."""
    _require_exact(base)
    PointMass(k)
    lam = _check_order(lam)
    return k * eval_curve(base, lam) + _order_term(math.log(k), lam)


def lower_bound_point_mass(epsilon: float, k: int, lam: float) -> float:
    """Divergence achieved by k runs of randomized response (a lower bound).

    k*epsilon - k*log(1 + exp(-epsilon))/(lambda-1); equals k*epsilon at inf.
    """
    epsilon = _check_nonneg("epsilon", epsilon)
    PointMass(k)
    lam = _check_order(lam)
    if math.isinf(lam):
        return k * epsilon
    return k * epsilon - k * math.log1p(math.exp(-epsilon)) / (lam - 1.0)


def naive_composition(base: PrivacyCurve, k: int, lam: float) -> float:
    """k-fold composition, a valid bound for a fixed number of runs."""
    _require_exact(base)
    PointMass(k)
    return k * eval_curve(base, lam)


# ---------------------------------------------------------------------------
# Generic PGF bound


def _constraint_limits(base: PrivacyCurve, orders: Iterable[float]) -> tuple[tuple[float, ...], tuple[float, ...]]:
    os_, ls_ = [], []
    for o in sorted(set(orders)):
        e = eval_curve(base, o)
        if math.isinf(e):
            continue
        lim = e if math.isinf(o) else (o - 1.0) * e
        os_.append(o)
        ls_.append(lim + 1e-12 * (1.0 + abs(lim)))
    return tuple(os_), tuple(ls_)


@functools.lru_cache(maxsize=4096)
def _boundary(orders: tuple[float, ...], limits: tuple[float, ...], n: int) -> tuple[np.ndarray, np.ndarray]:
    q = np.linspace(0.0, 1.0, n)
    lo = kernels.feasible_lower(q, np.array(orders), np.array(limits))
    q.setflags(write=False)
    lo.setflags(write=False)
    return q, lo


class _LogDerivative:
    """log g with f'(x) = x^(j-1) g(x), g(0) > 0, plus a curvature bound.

    ``curvature(x0, x1)`` bounds |(log g)''| on [x0, x1].
    """

    def __init__(self, dist: RepetitionDistribution):
        self.j = kdist.min_positive_support(dist)
        if isinstance(dist, PointMass):
            self._kind, self._const = "const", math.log(dist.k)
        elif isinstance(dist, TruncatedNegativeBinomial):
            self._kind, self._dist = "tnb", dist
            self._c = 1.0 - dist.gamma
        elif isinstance(dist, Poisson):
            self._kind, self._dist = "poisson", dist
        else:
            w = dist.weights
            c0 = (np.arange(len(w)) * w)[self.j:]
            self._kind = "poly"
            self._c0 = c0
            self._c1 = np.polynomial.polynomial.polyder(c0) if len(c0) > 1 else np.zeros(1)
            self._c2 = np.polynomial.polynomial.polyder(c0, 2) if len(c0) > 2 else np.zeros(1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self._kind == "const":
            return np.full(x.shape, self._const)
        if self._kind == "poly":
            with np.errstate(divide="ignore"):
                return np.log(np.polynomial.polynomial.polyval(x, self._c0))
        with np.errstate(divide="ignore"):
            return np.log(self._dist.pgf_derivative(x))

    def curvature(self, x0, x1):
        x0 = np.asarray(x0, dtype=float)
        x1 = np.asarray(x1, dtype=float)
        if self._kind in ("const", "poisson"):
            return np.zeros(np.broadcast(x0, x1).shape)
        if self._kind == "tnb":
            d = self._dist
            return (d.eta + 1.0) * self._c ** 2 / (1.0 - self._c * x1) ** 2
        pv = np.polynomial.polynomial.polyval
        g0 = pv(x0, self._c0)
        return pv(x1, self._c2) / g0 + (pv(x1, self._c1) / g0) ** 2


def _penalty_sup(dist, lam: float, orders, limits, eps_lam: float, eps_inf: float | None,
                 n: int, tol: float = 1e-9, max_iter: int = 80) -> float:
    """Rigorous upper bound on sup over feasible (q, q') of
    lam*log f'(q) - (lam-1)*log f'(q').

    For fixed q the best q' is the smallest feasible one, lo(q). lo is
    non-decreasing and convex (lower boundary of a convex set containing the
    diagonal), so on a cell [a, b] two bounds hold:

    * monotone: lam*log f'(b) - (lam-1)*log f'(lo(a));
    * tangent: lo(q) >= T(q) = lo(a) + s (q - a) with s a left chord slope,
      so the penalty is below psi(q) = phi(q, T(q)), whose maximum over the
      cell is at most max(psi(a), psi(b)) + w^2/8 * sup|psi''|.

    Cells whose bound exceeds the best grid value by more than ``tol`` are
    split; the result is the largest cell bound.
    """
    logg = _LogDerivative(dist)
    j = logg.j
    lm1 = lam - 1.0

    def lower(q):
        return kernels.feasible_lower(q, np.array(orders), np.array(limits))

    def phi(q, qq):
        with np.errstate(divide="ignore", invalid="ignore"):
            val = lam * logg(q) - lm1 * logg(qq)
            if j > 1:
                val = val + (j - 1) * (lam * np.log(q) - lm1 * np.log(qq))
        return val

    def cell_ub(a, b, lo_a, slope):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            ub = lam * logg(b) - lm1 * logg(lo_a)
            if j > 1:
                part = np.minimum(lam * np.log(b) - lm1 * np.log(lo_a), lm1 * eps_lam)
                if eps_inf is not None:
                    part = np.minimum(part, np.log(b) + lm1 * eps_inf)
                ub = ub + (j - 1) * part
            w = b - a
            t_b = lo_a + slope * w
            curv = lam * logg.curvature(a, b) + lm1 * slope ** 2 * logg.curvature(lo_a, t_b)
            if j > 1:
                curv = curv + (j - 1) * (lam / a ** 2 + lm1 * slope ** 2 / lo_a ** 2)
            tang = np.maximum(phi(a, lo_a), phi(b, t_b)) + 0.125 * w * w * curv
        tang = np.where(np.isnan(tang), np.inf, tang)
        ub = np.where(np.isnan(ub), np.inf, ub)
        return np.minimum(ub, tang)

    def chords(pts, lo_pts, first):
        # left chord slope at each left endpoint (``pts`` are the left endpoints); shaved so rounding in lo cannot overstate it
        s = np.diff(lo_pts, axis=-1) / np.diff(pts, axis=-1)
        s = np.concatenate([np.broadcast_to(first, s.shape[:-1])[..., None], s], axis=-1)
        return np.maximum(0.0, s * (1.0 - 1e-9) - 1e-12)

    q, lo = _boundary(tuple(orders), tuple(limits), n)
    a, b, lo_a = q[:-1], q[1:], lo[:-1]
    slope = chords(q[:-1], lo[:-1], np.zeros(()))
    vals = phi(q, lo)
    best = float(np.max(np.where(np.isnan(vals), -np.inf, vals)))
    settled = -math.inf
    splits = 8
    frac = np.linspace(0.0, 1.0, splits + 1)
    for _ in range(max_iter):
        ub = cell_ub(a, b, lo_a, slope)
        keep = ub > best + tol
        if np.any(~keep):
            settled = max(settled, float(np.max(ub[~keep])))
        if not np.any(keep):
            return settled
        a, b, lo_a, slope = a[keep], b[keep], lo_a[keep], slope[keep]
        if len(a) > 50000:
            break
        pts = a[:, None] + (b - a)[:, None] * frac[None, :]
        inner = pts[:, 1:-1]
        lo_inner = lower(inner.ravel()).reshape(inner.shape)
        v = phi(inner, lo_inner)
        best = max(best, float(np.max(np.where(np.isnan(v), -np.inf, v))))
        lo_all = np.concatenate([lo_a[:, None], lo_inner], axis=1)
        new_slope = chords(pts[:, :-1], lo_all, slope)
        a = pts[:, :-1].ravel()
        b = pts[:, 1:].ravel()
        lo_a = lo_all.ravel()
        slope = new_slope.ravel()
    return max(settled, float(np.max(cell_ub(a, b, lo_a, slope))))


def generic_bound_point(dist: RepetitionDistribution, base: PrivacyCurve, lam: float,
                        lam_hat: float | str = "auto", resolution: int = _GENERIC_RESOLUTION,
                        zero_atom: bool = True) -> BoundPoint:
    """Numeric PGF bound; see ``generic_bound``.

    ``zero_atom=False`` omits the Pr[K=0] correction (for callers that apply
    it themselves).
    """
    _require_exact(base)
    lam = _check_order(lam, allow_inf=False)
    eps_lam = eval_curve(base, lam)
    if math.isinf(eps_lam):
        return BoundPoint(lam, math.inf, "generic")
    orders = [lam]
    if lam_hat == "auto":
        orders.append(LAMBDA_INF)
        hat = None
    else:
        hat = float(lam_hat)
        if math.isnan(hat) or hat <= 1.0:
            raise ParameterError(f"constraint order must exceed 1, got {lam_hat!r}")
        orders.append(hat)
    os_, ls_ = _constraint_limits(base, orders)
    eps_inf = None
    if LAMBDA_INF in os_:
        eps_inf = eval_curve(base, LAMBDA_INF)
    sup = _penalty_sup(dist, lam, os_, ls_, eps_lam, eps_inf, resolution)
    value = float(eps_lam + sup / (lam - 1.0))
    if zero_atom:
        value = _with_zero_atom(value, float(dist.pmf_array(np.array([0]))[0]), lam)
    return BoundPoint(lam, value, "generic", lam_hat=hat)


def generic_bound(dist: RepetitionDistribution, base: PrivacyCurve, lam: float,
                  lam_hat: float | str = "auto") -> float:
    """epsilon(lambda) plus the supremum of the PGF penalty over feasible pairs.

    The penalty is (1/(lambda-1)) log(f'(q)^lambda f'(q')^(1-lambda)) over
    postprocessing probabilities (q, q') of a neighbouring pair. A pair is
    feasible when the Bernoulli pair (q, q') satisfies the base guarantee in
    both directions at order lambda and at the constraint order: ``lam_hat``
    if given, otherwise inf (when the base is finite there). The supremum is
    bounded rigorously on a grid of q with exact inner boundary search and
    adaptive cell refinement, so the result never under-reports. When
    Pr[K=0] > 0 the shared no-output atom is added back (see
    ``_with_zero_atom``).
    """
    return generic_bound_point(dist, base, lam, lam_hat).epsilon


def truncated_bound(dist: RepetitionDistribution, limit: int, base: PrivacyCurve, lam: float,
                    lam_hat: float | str = "auto") -> float:
    """Bound for the law of ``dist`` conditioned on K <= ``limit``.

    generic_bound(dist, ...) + log(1/(1 - Pr[K>m]))/(lambda-1)
    + log(1 + E[K 1[K>m]] / (E[K] - E[K 1[K>m]])).
    """
    lam = _check_order(lam, allow_inf=False)
    tail_p, tail_e = kdist.truncation_stats(dist, limit)
    total = dist.mean()
    if tail_e >= total or tail_p >= 1.0:
        raise InfeasibleError("truncation removes all of E[K]; no bound available")
    base_val = generic_bound_point(dist, base, lam, lam_hat, zero_atom=False).epsilon
    value = base_val - math.log1p(-tail_p) / (lam - 1.0) + math.log1p(tail_e / (total - tail_e))
    f0 = float(dist.pmf_array(np.array([0]))[0]) / (1.0 - tail_p)
    return _with_zero_atom(value, f0, lam)


# ---------------------------------------------------------------------------
# Conditional sampling (repeat until the output lands in S)

_PRESETS: dict[int, tuple[float, float, float]] = {
    2: (math.inf, math.inf, 1.0),
    3: (1.0, math.inf, math.inf),
    4: (math.inf, 1.0, math.inf),
}


def _preset5(r: float) -> tuple[float, float, float]:
    if r < 1.0:
        raise ParameterError(f"preset 5 needs r >= 1, got {r}")
    p = math.inf if r == 1.0 else (math.inf if math.isinf(r) else r / (r - 1.0))
    if math.isinf(r):
        p = 1.0
    return (p, math.inf, r)


def _inv(x: float) -> float:
    return 0.0 if math.isinf(x) else 1.0 / x


def holder_bound(d_fwd: PrivacyCurve, d_bwd: PrivacyCurve, qs_lower: float, lam: float,
                 p: float, q: float, r: float) -> float:
    """Conditional-sampling bound for one Holder triple 1/p + 1/q + 1/r = 1."""
    lam = _check_order(lam, allow_inf=False)
    for name, v in (("p", p), ("q", q), ("r", r)):
        if not v >= 1.0:
            raise ParameterError(f"Holder exponent {name} must be >= 1, got {v}")
    ip, iq, ir = _inv(p), _inv(q), _inv(r)
    if abs(ip + iq + ir - 1.0) > 1e-12:
        raise ParameterError(f"Holder exponents violate 1/p + 1/q + 1/r = 1 (sum {ip + iq + ir!r})")
    lm1 = lam - 1.0
    o1 = math.inf if ir == 0.0 else r * (lam - ip)
    if o1 <= 1.0:
        t1 = 0.0
    else:
        c1 = (lam - ip - ir) / lm1
        e1 = eval_curve(d_fwd, o1)
        t1 = c1 * e1 if c1 != 0.0 else 0.0
    o0 = lam + iq - 1.0
    if o0 <= 1.0:
        t0 = 0.0
    else:
        t0 = (o0 - 1.0) / lm1 * eval_curve(d_bwd, o0)
    return t1 + t0 + (ir + 1.0) / lm1 * -math.log(qs_lower)


def conditional_bound(d_fwd: PrivacyCurve, d_bwd: PrivacyCurve, qs_lower: float, lam: float,
                      holder: int | str | tuple[float, float, float] = "auto",
                      preset5_r: float = 2.0) -> BoundPoint:
    """Bound on D_lambda(Q_S || Q'_S) for the run-until-in-S algorithm.

    Args:
      d_fwd: curve bounding D(Q || Q').
      d_bwd: curve bounding D(Q' || Q).
      qs_lower: lower bound on Q(S), in (0, 1].
      lam: order in (1, inf].
      holder: a (p, q, r) triple, a preset index 1..5, or "auto" (minimum over
        the presets and a grid of triples). Preset 1 is the max-divergence
        bound D_inf(Q||Q') + D_inf(Q'||Q), valid at every order.
      preset5_r: the free parameter r >= 1 of preset 5.
    """
    _require_exact(d_fwd)
    _require_exact(d_bwd)
    qs_lower = float(qs_lower)
    if not 0.0 < qs_lower <= 1.0:
        raise ParameterError(f"qs_lower must lie in (0, 1], got {qs_lower}")
    lam = _check_order(lam)

    def preset1() -> float:
        return eval_curve(d_fwd, LAMBDA_INF) + eval_curve(d_bwd, LAMBDA_INF)

    if holder == 1 or math.isinf(lam):
        return BoundPoint(lam, preset1(), "conditional", holder=(math.inf, math.inf, math.inf))
    if holder == "auto":
        cands: list[tuple[float, float, float]] = [_PRESETS[2], _PRESETS[3], _PRESETS[4]]
        cands += [_preset5(r) for r in (1.5, 2.0, 4.0, 8.0)]
        steps = np.round(np.arange(0.0, 1.0001, 0.05), 10)
        for ip in steps:
            for iq in steps:
                ir = round(1.0 - ip - iq, 10)
                if ir < 0:
                    continue
                cands.append((1.0 / ip if ip else math.inf, 1.0 / iq if iq else math.inf,
                              1.0 / ir if ir else math.inf))
        best_val, best_h = preset1(), (math.inf, math.inf, math.inf)
        for h in cands:
            try:
                v = holder_bound(d_fwd, d_bwd, qs_lower, lam, *h)
            except ParameterError:
                continue
            if v < best_val:
                best_val, best_h = v, h
        return BoundPoint(lam, float(best_val), "conditional", holder=best_h)
    if isinstance(holder, int):
        if holder in _PRESETS:
            h = _PRESETS[holder]
        elif holder == 5:
            h = _preset5(preset5_r)
        else:
            raise ParameterError(f"preset must be 1..5, got {holder}")
    else:
        h = tuple(float(v) for v in holder)
        if len(h) != 3:
            raise ParameterError("holder must be a (p, q, r) triple")
    return BoundPoint(lam, float(holder_bound(d_fwd, d_bwd, qs_lower, lam, *h)), "conditional", holder=h)


# ---------------------------------------------------------------------------
# Conversions


def pure_to_zcdp(epsilon: float) -> float:
    """epsilon-DP implies (epsilon^2/2)-zCDP."""
    epsilon = _check_nonneg("epsilon", epsilon)
    return 0.5 * epsilon * epsilon


def _log_delta(lam, eps, eps_hat):
    lam = np.asarray(lam, dtype=float)
    return -(lam - 1.0) * (eps_hat - eps) - np.log(lam) + (lam - 1.0) * np.log1p(-1.0 / lam)


def rdp_point_to_delta(lam: float, epsilon: float, epsilon_hat: float) -> float:
    """delta such that (lambda, epsilon)-RDP implies (epsilon_hat, delta)-DP.

    delta = exp(-(lambda-1)(epsilon_hat-epsilon)) / lambda * (1-1/lambda)^(lambda-1),
    which decreases as epsilon_hat grows. Capped at 1.
    """
    lam = _check_order(lam, allow_inf=False)
    return float(min(1.0, math.exp(float(_log_delta(lam, epsilon, epsilon_hat)))))


def curve_delta(curve: PrivacyCurve, eps_dp: float) -> float:
    """Smallest delta the curve certifies at DP level ``eps_dp`` (plus failure mass)."""
    d0 = failure_mass(curve)
    clean = delta_free(curve)
    if eval_curve(clean, LAMBDA_INF) <= eps_dp:
        return min(1.0, d0)
    orders = _curve_orders(clean)
    best = math.inf
    if len(orders):
        eps = _eval_many(clean, orders)
        with np.errstate(invalid="ignore", over="ignore"):
            ld = _log_delta(orders, eps, eps_dp)
        best = float(np.nanmin(ld))
    if isinstance(clean, PureDp):
        rho = pure_to_zcdp(clean.epsilon)
        ld = _log_delta(_DENSE_ORDERS, rho * _DENSE_ORDERS, eps_dp)
        best = min(best, float(np.min(ld)))
    delta = 1.0 if best >= 0 else math.exp(best)
    return min(1.0, delta + d0)


def _dp_epsilon_at(orders: np.ndarray, eps: np.ndarray, log_inv_delta: float) -> np.ndarray:
    return eps + (log_inv_delta + (orders - 1.0) * np.log1p(-1.0 / orders) - np.log(orders)) / (orders - 1.0)


def rdp_to_approx_dp(curve: PrivacyCurve, target_delta: float) -> float:
    """Smallest epsilon with (epsilon, target_delta)-DP certified by the curve.

    The failure mass of the curve is subtracted from the delta budget first.
    """
    _check_curve(curve)
    target_delta = float(target_delta)
    if not 0.0 < target_delta < 1.0:
        raise ParameterError(f"target delta must lie in (0, 1), got {target_delta}")
    budget = target_delta - failure_mass(curve)
    if budget <= 0.0:
        raise InfeasibleError(
            f"target delta {target_delta} does not exceed the curve's failure mass {failure_mass(curve)}")
    clean = delta_free(curve)
    log_inv = -math.log(budget)
    best = eval_curve(clean, LAMBDA_INF)
    orders = _curve_orders(clean)
    if len(orders):
        vals = _dp_epsilon_at(orders, _eval_many(clean, orders), log_inv)
        i = int(np.argmin(vals))
        best = min(best, float(vals[i]))
        if isinstance(clean, ZCdp) and clean.rho > 0:
            lo = orders[max(i - 1, 0)]
            hi = orders[min(i + 1, len(orders) - 1)]
            res = optimize.minimize_scalar(
                lambda o: float(_dp_epsilon_at(np.array([o]), np.array([clean.rho * o]), log_inv)[0]),
                bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
            best = min(best, float(res.fun))
    return max(0.0, best)


# ---------------------------------------------------------------------------
# Whole-curve accounting


def _tnb_points(dist: TruncatedNegativeBinomial, base, lambdas):
    pts = []
    for lam in lambdas:
        if math.isinf(lam):
            e = eval_curve(base, LAMBDA_INF)
            if math.isinf(e):
                pts.append(BoundPoint(lam, math.inf, "none"))
            else:
                pts.append(BoundPoint(lam, bound_tnb_pure(e, dist.eta), "tnb_pure_dp", lam_hat=LAMBDA_INF))
        else:
            pts.append(bound_tnb(base, dist.eta, dist.gamma, lam))
    return pts


def _point_mass_points(dist: PointMass, base, lambdas):
    label = "base" if dist.k == 1 else "composition"
    return [BoundPoint(lam, naive_composition(base, dist.k, lam), label) for lam in lambdas]


def _poisson_points(dist: Poisson, base, lambdas):
    # same result as poisson_point(closure=True) per order, sharing the raw evaluations
    finite = [l for l in lambdas if math.isfinite(l)]
    raw = {}
    if finite:
        for o in _closure_orders(min(finite), finite):
            if math.isfinite(o):
                raw[o] = poisson_point(base, dist.mu, o, closure=False)
    pts = []
    for lam in lambdas:
        if math.isinf(lam):
            pts.append(BoundPoint(lam, math.inf, "none"))
            continue
        cands = [raw[o] for o in _closure_orders(lam) if o in raw]
        best = min(cands, key=lambda p: p.epsilon)
        pts.append(BoundPoint(lam, best.epsilon, "poisson", source_lam=best.source_lam))
    return pts


def _truncated_points(dist: Truncated, base, lambdas):
    pts = []
    for lam in lambdas:
        if math.isinf(lam):
            pts.append(BoundPoint(lam, math.inf, "none"))
        else:
            pts.append(BoundPoint(lam, truncated_bound(dist.inner, dist.limit, base, lam), "truncated"))
    return pts


def _lambdas(lambdas) -> tuple[float, ...]:
    if lambdas is None:
        return STANDARD_LAMBDAS
    out = tuple(sorted({_check_order(l) for l in lambdas}))
    if not out:
        raise ParameterError("empty lambda grid")
    return out


def tuning_bound(dist: RepetitionDistribution, base: PrivacyCurve, lambdas: Sequence[float] | None = None,
                 delta: float | None = None) -> TuningBound:
    """Certified curve of best-of-K for K ~ ``dist`` over a lambda grid.

    Picks the matching bound per family: composition for a point mass, the
    TNB bound (and the gamma-free pure-DP bound at lambda = inf), the
    Poisson bound, or the truncation bound. Bases with failure mass are
    routed through ``approx_repetition``. The curve is monotonically closed;
    with ``delta`` the (epsilon, delta) conversion is attached.
    """
    kdist._check_dist(dist)
    _check_curve(base)
    if failure_mass(base) > 0.0:
        return approx_repetition(base, dist, lambdas, delta)
    lams = _lambdas(lambdas)
    if isinstance(dist, PointMass):
        pts = _point_mass_points(dist, base, lams)
    elif isinstance(dist, TruncatedNegativeBinomial):
        pts = _tnb_points(dist, base, lams)
    elif isinstance(dist, Poisson):
        pts = _poisson_points(dist, base, lams)
    else:
        pts = _truncated_points(dist, base, lams)
    tb = TuningBound(_monotone_closure(pts), dist, base, method=type(dist).__name__)
    return _with_conversion(tb, delta)


def _with_conversion(tb: TuningBound, delta: float | None) -> TuningBound:
    if delta is None:
        return tb
    return dataclasses.replace(tb, approx_dp=(rdp_to_approx_dp(tb.curve, delta), float(delta)))


def conditional_tuning_bound(d_fwd: PrivacyCurve, d_bwd: PrivacyCurve, qs_lower: float,
                             lambdas: Sequence[float] | None = None,
                             delta: float | None = None) -> TuningBound:
    """Certified curve for run-until-success with automatic Holder choice."""
    lams = _lambdas(lambdas)
    pts = [conditional_bound(d_fwd, d_bwd, qs_lower, lam) for lam in lams]
    tb = TuningBound(_monotone_closure(pts), None, d_fwd, method="until_success")
    return _with_conversion(tb, delta)


def approx_repetition(base: PrivacyCurve, dist: RepetitionDistribution,
                      lambdas: Sequence[float] | None = None, delta: float | None = None) -> TuningBound:
    """Repetition of a base with failure mass delta0.

    Runs the exact analysis for the tilted count K' (PGF f(x(1-d0))/f(1-d0))
    against the failure-free base, and reports failure mass 1 - f(1-d0).
    """
    _check_curve(base)
    kdist._check_dist(dist)
    d0 = failure_mass(base)
    if d0 >= 1.0:
        raise ParameterError("failure mass must be < 1")
    clean = delta_free(base)
    if d0 == 0.0:
        return tuning_bound(dist, clean, lambdas, delta)
    tilted = kdist.tilt(dist, 1.0 - d0)
    inner = tuning_bound(tilted, clean, lambdas)
    out_delta = float(1.0 - kdist.pgf(dist, 1.0 - d0))
    tb = TuningBound(inner.points, dist, base, failure_mass=out_delta, method=inner.method + "+approx")
    return _with_conversion(tb, delta)


def approx_poisson(epsilon0: float, delta0: float, mu: float) -> tuple[float, float, float]:
    """(epsilon', delta', lambda_max) for Poisson(mu) repetition of an
    (epsilon0, delta0)-DP base.

    epsilon' = epsilon0 + (exp(epsilon0)-1) log(mu), valid at orders up to
    lambda_max = 1 + 1/(exp(epsilon0)-1); delta' = 1 - exp(-mu delta0).
    """
    epsilon0 = _check_nonneg("epsilon0", epsilon0)
    delta0 = _check_prob("delta0", delta0)
    if delta0 >= 1.0:
        raise ParameterError("delta0 must be < 1")
    if not mu > 0:
        raise ParameterError(f"mu must be > 0, got {mu}")
    if epsilon0 == 0.0:
        lam_max = math.inf
        eps_out = 0.0
    else:
        lam_max = 1.0 + 1.0 / math.expm1(epsilon0)
        eps_out = bound_poisson(epsilon0, epsilon0, 0.0, mu, lam_max)
    return eps_out, -math.expm1(-mu * delta0), lam_max
