"""Utility of best-of-K and calibration of K's law to a privacy budget."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from typing import Any, Callable, Sequence

import numpy as np
from scipy import integrate

from dptune import accountant, kdist
from dptune.accountant import PrivacyCurve, TuningBound
from dptune.errors import InfeasibleError, ParameterError, ValidationError
from dptune.kdist import Poisson, RepetitionDistribution, TruncatedNegativeBinomial

DEFAULT_TAIL_KS = (2, 5, 10, 20, 50, 100)


@dataclasses.dataclass(frozen=True)
class UtilitySummary:
    expected_quantile: float
    success_probability: float
    per_run_success: float
    expected_repetitions: float
    tail: tuple[tuple[int, float], ...]

    def to_json(self) -> dict[str, Any]:
        return {
            "expected_quantile": self.expected_quantile,
            "success_probability": self.success_probability,
            "per_run_success": self.per_run_success,
            "expected_repetitions": self.expected_repetitions,
            "tail": [[k, v] for k, v in self.tail],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["field", "k", "value"])
        w.writerow(["expected_quantile", "", repr(self.expected_quantile)])
        w.writerow(["success_probability", "", repr(self.success_probability)])
        w.writerow(["per_run_success", "", repr(self.per_run_success)])
        w.writerow(["expected_repetitions", "", repr(self.expected_repetitions)])
        for k, v in self.tail:
            w.writerow(["tail", k, repr(v)])
        return buf.getvalue()


# quadrature stops here; floats are too sparse above it to resolve f
_QUAD_TOP = 1.0 - 2.0 ** -50


def _breakpoints(dist: RepetitionDistribution) -> list[float]:
    # f rises over a window of width ~ 1/E[K] below x = 1
    scale = 1.0 / max(dist.mean(), 1.0)
    pts = {1.0 - c * scale for c in (100.0, 10.0, 1.0, 0.1)}
    # decades toward 1 for very large means, where f has a log-like corner
    pts.update(1.0 - 10.0 ** -j for j in range(1, 16) if 10.0 ** -j > scale)
    return sorted(x for x in pts if 0.0 < x < 1.0)


def expected_quantile(dist: RepetitionDistribution) -> float:
    """E[K/(K+1)] = 1 - integral_0^1 f(x) dx, by adaptive quadrature.

    This is the expected quantile of the returned run among the base
    algorithm's outputs; K = 0 contributes 0.
    """
    kdist._check_dist(dist)
    pts = [x for x in _breakpoints(dist) if x < _QUAD_TOP]
    val, _ = integrate.quad(lambda x: float(dist.pgf(x)), 0.0, _QUAD_TOP, points=pts or None,
                            epsabs=1e-12, epsrel=1e-12, limit=500)
    # f is increasing with f(1) = 1; the midpoint is within 2^-51 of the last sliver
    val += (1.0 - _QUAD_TOP) * 0.5 * (float(dist.pgf(_QUAD_TOP)) + 1.0)
    return min(1.0, max(0.0, 1.0 - val))


def expected_quantile_series(dist: RepetitionDistribution) -> float:
    """sum_k pmf(k) k/(k+1) over the tabulated support."""
    w = kdist.series_pmf(dist)
    k = np.arange(len(w), dtype=float)
    return float(np.sum(w * k / (k + 1.0)))


def success_probability(dist: RepetitionDistribution, p: float) -> float:
    """1 - f(1 - p): probability that some run succeeds when each does w.p. p."""
    kdist._check_dist(dist)
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"per-run success probability must lie in [0, 1], got {p}")
    if p == 0.0:
        return 0.0  # f(1) = 1 exactly, even where the PGF rounds
    return float(min(1.0, max(0.0, 1.0 - float(dist.pgf(1.0 - p)))))


def _check_monotone_cdf(cdf: Callable[[float], float], lo: float, hi: float) -> None:
    a = math.atan(lo) if math.isinf(lo) else lo
    b = math.atan(hi) if math.isinf(hi) else hi
    if math.isinf(lo) or math.isinf(hi):
        t = np.linspace(math.atan(lo), math.atan(hi), 259)[1:-1]
        xs = np.tan(t)
    else:
        xs = np.linspace(a, b, 257)
    vals = np.array([float(cdf(x)) for x in xs])
    if np.any(np.diff(vals) < -1e-12):
        raise ValidationError("score cdf is not non-decreasing on its support")
    if np.any(vals < -1e-12) or np.any(vals > 1 + 1e-12):
        raise ValidationError("score cdf leaves [0, 1]")


def expected_score(dist: RepetitionDistribution, cdf: Callable[[float], float], pdf: Callable[[float], float],
                   support: tuple[float, float] = (0.0, 1.0)) -> float:
    """E[best score] = integral of x f'(cdf(x)) pdf(x) over ``support``.

    Args:
      cdf, pdf: the base score distribution; must be reentrant.
      support: integration range (may be infinite).
    """
    kdist._check_dist(dist)
    lo, hi = (float(v) for v in support)
    if not lo < hi:
        raise ValidationError("support must be a non-empty interval")
    _check_monotone_cdf(cdf, lo, hi)

    def integrand(x):
        c = min(1.0, max(0.0, float(cdf(x))))
        return x * float(dist.pgf_derivative(c)) * float(pdf(x))

    val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-10, epsrel=1e-10, limit=500)
    return float(val)


def utility_summary(dist: RepetitionDistribution, p: float = 0.01,
                    tail_ks: Sequence[int] = DEFAULT_TAIL_KS) -> UtilitySummary:
    return UtilitySummary(
        expected_quantile=expected_quantile(dist),
        success_probability=success_probability(dist, p),
        per_run_success=float(p),
        expected_repetitions=kdist.mean(dist),
        tail=tuple((int(k), kdist.tail_bound(dist, int(k))) for k in tail_ks),
    )


def monte_carlo_quantile(dist: RepetitionDistribution, trials: int, seed: int) -> float:
    """Mean quantile of the best of K uniform scores, simulated.

    The maximum of k uniforms has the law of U^(1/k); K = 0 scores 0.
    """
    rng = np.random.default_rng(seed)
    ks = kdist.sample_many(dist, rng, trials)
    u = rng.random(trials)
    with np.errstate(divide="ignore"):
        best = np.where(ks > 0, np.power(u, 1.0 / np.maximum(ks, 1)), 0.0)
    return float(best.mean())


# ---------------------------------------------------------------------------
# Calibration


@dataclasses.dataclass(frozen=True)
class CalibrationResult:
    family: str
    distribution: RepetitionDistribution
    bound: TuningBound
    achieved: tuple[float, float]
    budget: tuple[float, float]
    summary: UtilitySummary
    target_met: bool
    warning: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "family": self.family,
            "distribution": kdist.to_json(self.distribution),
            "mean": kdist.mean(self.distribution),
            "achieved": {"epsilon": self.achieved[0], "delta": self.achieved[1]},
            "budget": {"epsilon": self.budget[0], "delta": self.budget[1]},
            "target_met": self.target_met,
            "warning": self.warning,
            "summary": self.summary.to_json(),
            "bound": self.bound.to_json(),
        }


_TNB_RANGE = (-20.0, 5.0)   # v = log log(1/gamma)
_POISSON_RANGE = (math.log(1e-6), math.log(1e8))   # v = log mu


def _member(family: str, eta: float, v: float) -> RepetitionDistribution:
    if family == "tnb":
        return TruncatedNegativeBinomial(eta, math.exp(-math.exp(v)))
    return Poisson(math.exp(v))


def _converted(base: PrivacyCurve, dist: RepetitionDistribution, delta: float) -> tuple[float, TuningBound]:
    tb = accountant.tuning_bound(dist, base, delta=delta)
    return tb.approx_dp[0], tb


def _meets(dist: RepetitionDistribution, objective) -> bool:
    kind = objective[0]
    if kind == "max_mean":
        return False
    if kind == "mean":
        return kdist.mean(dist) >= objective[1]
    return success_probability(dist, objective[2]) >= objective[1]


def _parse_objective(objective) -> tuple:
    if objective is None or objective == "max_mean":
        return ("max_mean",)
    if isinstance(objective, tuple) and objective and objective[0] == "mean" and len(objective) == 2:
        if not objective[1] > 0:
            raise ParameterError("target mean must be positive")
        return ("mean", float(objective[1]))
    if isinstance(objective, tuple) and objective and objective[0] == "beta" and len(objective) == 3:
        beta, p = float(objective[1]), float(objective[2])
        if not (0 < beta < 1 and 0 < p <= 1):
            raise ParameterError("target beta must lie in (0, 1) and p in (0, 1]")
        return ("beta", beta, p)
    raise ParameterError(f"objective must be 'max_mean', ('mean', m) or ('beta', b, p); got {objective!r}")


def calibrate(base: PrivacyCurve, family: str, budget: tuple[float, float], objective=None,
              eta: float = 0.0, steps: int = 80, summary_p: float = 0.01) -> CalibrationResult:
    """Pick gamma (TNB, fixed eta) or mu (Poisson) for a target (epsilon, delta) budget.

    With the default objective the largest mean whose converted guarantee fits
    the budget is returned. With ('mean', m) or ('beta', b, p) the smallest
    member meeting the target is returned when it fits; otherwise the largest
    fitting member, with ``target_met`` False. The search bisects in log
    space; the bound is checked for monotonicity along the bracket and a grid
    scan replaces bisection (with a warning) when that check fails.
    """
    if family not in ("tnb", "poisson"):
        raise ParameterError(f"family must be 'tnb' or 'poisson', got {family!r}")
    eps_budget, delta = float(budget[0]), float(budget[1])
    if not (eps_budget >= 0 and 0 < delta < 1):
        raise ParameterError("budget needs epsilon >= 0 and delta in (0, 1)")
    if family == "tnb" and not eta > -1:
        raise ParameterError(f"eta must exceed -1, got {eta}")
    obj = _parse_objective(objective)
    single = accountant.rdp_to_approx_dp(base, delta)
    if single > eps_budget:
        raise InfeasibleError(f"a single run already costs epsilon = {single:.6g} > budget {eps_budget:.6g}")

    lo, hi = _TNB_RANGE if family == "tnb" else _POISSON_RANGE
    cache: dict[float, tuple[float, TuningBound]] = {}

    def cost(v: float) -> float:
        if v not in cache:
            cache[v] = _converted(base, _member(family, eta, v), delta)
        return cache[v][0]

    warning = None
    grid = np.linspace(lo, hi, 16)
    costs = [cost(float(v)) for v in grid]
    if any(c1 < c0 - 1e-9 for c0, c1 in zip(costs, costs[1:])):
        warning = "bound not monotone in the searched parameter; used a grid scan"
        fine = np.linspace(lo, hi, 2001)
        ok = [float(v) for v in fine if cost(float(v)) <= eps_budget]
        if not ok:
            raise InfeasibleError("no family member fits the budget")
        best_v = max(ok)
    elif cost(lo) > eps_budget:
        raise InfeasibleError("no family member fits the budget")
    elif cost(hi) <= eps_budget:
        best_v = hi
    else:
        a, b = lo, hi
        for _ in range(steps):
            mid = 0.5 * (a + b)
            if cost(mid) <= eps_budget:
                a = mid
            else:
                b = mid
        best_v = a

    chosen_v = best_v
    target_met = True
    if obj[0] != "max_mean":
        top = _member(family, eta, best_v)
        if not _meets(top, obj):
            target_met = False
        else:
            a, b = lo, best_v
            if _meets(_member(family, eta, a), obj):
                chosen_v = a
            else:
                for _ in range(steps):
                    mid = 0.5 * (a + b)
                    if _meets(_member(family, eta, mid), obj):
                        b = mid
                    else:
                        a = mid
                chosen_v = b
    dist = _member(family, eta, chosen_v)
    eps_out, tb = _converted(base, dist, delta)
    if eps_out > eps_budget:
        raise InfeasibleError("calibrated distribution re-evaluates above budget")
    return CalibrationResult(family, dist, tb, (eps_out, delta), (eps_budget, delta),
                             utility_summary(dist, summary_p if obj[0] != "beta" else obj[2]),
                             target_met, warning)
