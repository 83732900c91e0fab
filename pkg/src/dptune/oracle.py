"""Exact ground truth on finite mechanisms.

A finite mechanism pair is two probability vectors over the same ordered
outcome set, index 0 being the most preferred outcome. The functions here
compute the exact output law of best-of-K, exact Renyi divergences, the
worst-case constructions used to test the bounds, and Monte Carlo checks.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import math
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import optimize, special

from dptune import accountant, kdist, kernels
from dptune.errors import DegenerateSetError, DomainError, NoSolutionError, ParameterError, ValidationError
from dptune.kdist import PointMass, Poisson, RepetitionDistribution, Truncated, TruncatedNegativeBinomial

PMF_TOL = 1e-12


def validate_pmf(v: Sequence[float], name: str = "pmf") -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"{name} must be a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValidationError(f"{name} has negative or non-finite entries")
    if abs(arr.sum() - 1.0) > PMF_TOL:
        raise ValidationError(f"{name} sums to {arr.sum()!r}, not 1")
    return arr


@dataclasses.dataclass(frozen=True, eq=False)
class FiniteMechanismPair:
    """Output laws Q (``p``) and Q' (``p_prime``) on neighbouring inputs."""

    p: np.ndarray
    p_prime: np.ndarray

    def __post_init__(self):
        p = validate_pmf(self.p, "p")
        pp = validate_pmf(self.p_prime, "p_prime")
        if p.shape != pp.shape:
            raise ValidationError("p and p_prime must have the same length")
        p.setflags(write=False)
        pp.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "p_prime", pp)

    @property
    def support_size(self) -> int:
        return len(self.p)

    def swapped(self) -> "FiniteMechanismPair":
        return FiniteMechanismPair(self.p_prime, self.p)

    def to_json(self) -> dict[str, Any]:
        return {"p": self.p.tolist(), "p_prime": self.p_prime.tolist()}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "FiniteMechanismPair":
        try:
            return cls(obj["p"], obj["p_prime"])
        except (KeyError, TypeError):
            raise ValidationError('mechanism pair JSON must look like {"p": [...], "p_prime": [...]}') from None


def load_pair(path: str) -> FiniteMechanismPair:
    with open(path) as fh:
        return FiniteMechanismPair.from_json(json.load(fh))


# ---------------------------------------------------------------------------
# Output law of best-of-K


def _tails(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Pr[draw >= y] and Pr[draw > y] in preference order (index 0 best)
    ge = np.clip(np.cumsum(q[::-1])[::-1], 0.0, 1.0)
    gt = np.append(ge[1:], 0.0)
    return ge, gt


def _with_no_output(law: np.ndarray, dist: RepetitionDistribution) -> np.ndarray:
    f0 = float(dist.pmf_array(np.array([0]))[0])
    return np.append(law, f0) if f0 > 0 else law


def repeated_max_distribution(q: Sequence[float], dist: RepetitionDistribution) -> np.ndarray:
    """Exact law of the best of K draws from ``q``.

    The preferred outcome of K draws is >= y (in preference rank) with
    probability f(Q(>= y)), so outcome y gets f(Q(>=y)) - f(Q(>y)). When
    Pr[K=0] > 0 a trailing no-output slot carries f(0).
    """
    kdist._check_dist(dist)
    q = validate_pmf(q)
    ge, gt = _tails(q)
    law = np.asarray(dist.pgf(ge), dtype=float) - np.asarray(dist.pgf(gt), dtype=float)
    return _with_no_output(law, dist)


def brute_force_max_distribution(q: Sequence[float], dist: RepetitionDistribution) -> np.ndarray:
    """Same law by summing pmf(k) times the law of the best of k draws."""
    kdist._check_dist(dist)
    q = validate_pmf(q)
    ge, gt = _tails(q)
    law = kernels.max_law(kdist.series_pmf(dist), ge, gt)
    return _with_no_output(law, dist)


# ---------------------------------------------------------------------------
# Divergences


def renyi_divergence(p: Sequence[float], p_prime: Sequence[float], lam: float) -> float:
    """D_lambda(p || p_prime) for lambda in [1, inf]; +inf on support violation.

    Order 1 is KL computed directly. Rounding can push the log-sum slightly
    below zero; the result is clamped at 0.
    """
    p = validate_pmf(p, "p")
    pp = validate_pmf(p_prime, "p_prime")
    if p.shape != pp.shape:
        raise ValidationError("p and p_prime must have the same length")
    lam = float(lam)
    if math.isnan(lam) or lam < 1.0:
        raise DomainError(f"divergence order must be >= 1, got {lam}")
    mask = p > 0
    if np.any(pp[mask] == 0.0):
        return math.inf
    lp, lpp = np.log(p[mask]), np.log(pp[mask])
    if lam == 1.0:
        val = float(np.sum(p[mask] * (lp - lpp)))
    elif math.isinf(lam):
        val = float(np.max(lp - lpp))
    else:
        val = float(special.logsumexp(lam * lp + (1.0 - lam) * lpp)) / (lam - 1.0)
    return max(0.0, val)


def symmetric_divergence(p, p_prime, lam: float) -> float:
    return max(renyi_divergence(p, p_prime, lam), renyi_divergence(p_prime, p, lam))


def hockey_stick(p: Sequence[float], p_prime: Sequence[float], epsilon: float) -> float:
    """sum max(0, p - exp(epsilon) p'): the smallest delta for (epsilon, delta)-DP one way."""
    p = validate_pmf(p, "p")
    pp = validate_pmf(p_prime, "p_prime")
    return float(np.sum(np.maximum(0.0, p - math.exp(epsilon) * pp)))


def tv_distance(u: Sequence[float], v: Sequence[float]) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValidationError("vectors must have the same length")
    return 0.5 * float(np.sum(np.abs(u - v)))


# ---------------------------------------------------------------------------
# Worst-case constructions


def worst_case_point_mass(epsilon: float) -> FiniteMechanismPair:
    """Randomized response where the preferred outcome is less likely under Q."""
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise ParameterError(f"epsilon must be a positive real, got {epsilon}")
    lo = 1.0 / (1.0 + math.exp(epsilon))
    hi = 1.0 - lo
    return FiniteMechanismPair([lo, hi], [hi, lo])


def worst_case_conditional(s: float, t: float, a: float) -> tuple[FiniteMechanismPair, tuple[int, ...]]:
    """Three-outcome pair whose conditioning on S = {0, 1} blows up the divergence.

    Q = (a e^-s, a e^-s, 1 - 2a e^-s), Q' = (a e^-(s+t), a, 1 - a - a e^-(s+t)).
    """
    if not (s > 0 and t > 0 and math.isfinite(s) and math.isfinite(t)):
        raise ParameterError(f"s and t must be positive reals, got s={s}, t={t}")
    if not 0.0 < a <= 0.25:
        raise ParameterError(f"a must lie in (0, 1/4], got {a}")
    x = a * math.exp(-s)
    y = a * math.exp(-s - t)
    return FiniteMechanismPair([x, x, 1.0 - 2.0 * x], [y, a, 1.0 - a - y]), (0, 1)


def conditioned_pair(pair: FiniteMechanismPair, subset: Iterable[int]) -> tuple[FiniteMechanismPair, float, float]:
    """Restrict both sides to ``subset`` and renormalize; also returns (Q(S), Q'(S))."""
    idx = np.array(sorted(set(int(i) for i in subset)), dtype=int)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= pair.support_size:
        raise ValidationError(f"subset {list(idx)} is not a non-empty set of outcome indices")
    p, pp = pair.p[idx], pair.p_prime[idx]
    qs, qps = float(p.sum()), float(pp.sum())
    if qs <= 0 or qps <= 0:
        raise DegenerateSetError("conditioning set has zero probability on one side")
    return FiniteMechanismPair(p / qs, pp / qps), qs, qps


def conditional_lower_formula(s: float, t: float, lam: float) -> float:
    """s + t - lambda log 2/(lambda-1), a lower bound on D_lambda(Q_S || Q'_S)."""
    return s + t - lam * math.log(2.0) / (lam - 1.0)


def _triple_residual(x, lam, rate, a):
    pair, _ = worst_case_conditional(x[0], x[1], a)
    return np.array([renyi_divergence(pair.p, pair.p_prime, lam) - rate,
                     renyi_divergence(pair.p_prime, pair.p, lam) - rate])


_BOX = (1e-6, 50.0)


def solve_conditional_triple(lam: float, rate: float | None = None, a: float = 0.01,
                  tol: float = 1e-10) -> tuple[float, float]:
    """(s, t) making both order-lambda divergences of the conditional triple equal ``rate``.

    Damped Newton on the exact divergences, falling back to nested bracketing
    on the box [1e-6, 50]^2. ``rate`` defaults to 0.1 * lambda.
    """
    lam = float(lam)
    if not lam > 1.0 or math.isinf(lam):
        raise DomainError(f"lambda must be a finite order > 1, got {lam}")
    rate = 0.1 * lam if rate is None else float(rate)
    if not rate > 0:
        raise ParameterError(f"rate must be positive, got {rate}")
    worst_case_conditional(1.0, 1.0, a)
    sol = _newton(lam, rate, a, tol)
    if sol is None:
        sol = _nested(lam, rate, a, tol)
    return sol


def _newton(lam, rate, a, tol):
    x = np.array([max(0.01, math.sqrt(rate)), max(0.01, math.sqrt(rate))])
    lo, hi = _BOX
    for _ in range(100):
        r = _triple_residual(x, lam, rate, a)
        norm = float(np.max(np.abs(r)))
        if norm < tol:
            return float(x[0]), float(x[1])
        jac = np.empty((2, 2))
        for j in range(2):
            h = 1e-7 * max(1.0, x[j])
            e = np.zeros(2)
            e[j] = h
            jac[:, j] = (_triple_residual(x + e, lam, rate, a) - r) / h
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            return None
        damp = 1.0
        while damp > 1e-6:
            cand = np.clip(x + damp * step, lo, hi)
            if float(np.max(np.abs(_triple_residual(cand, lam, rate, a)))) < norm:
                x = cand
                break
            damp *= 0.5
        else:
            return None
    return None


def _nested(lam, rate, a, tol):
    lo, hi = _BOX

    def t_for(s):
        f = lambda t: _triple_residual((s, t), lam, rate, a)[0]
        if f(lo) > 0 or f(hi) < 0:
            return None
        return optimize.brentq(f, lo, hi, xtol=1e-14)

    def g(s):
        t = t_for(s)
        if t is None:
            return math.nan
        return _triple_residual((s, t), lam, rate, a)[1]

    grid = np.geomspace(lo, hi, 200)
    vals = [g(s) for s in grid]
    for s0, s1, v0, v1 in zip(grid, grid[1:], vals, vals[1:]):
        if np.isfinite(v0) and np.isfinite(v1) and v0 * v1 <= 0:
            s = optimize.brentq(g, s0, s1, xtol=1e-14)
            t = t_for(s)
            if float(np.max(np.abs(_triple_residual((s, t), lam, rate, a)))) < max(tol, 1e-9):
                return float(s), float(t)
    raise NoSolutionError(f"no (s, t) in [1e-6, 50]^2 gives divergence {rate} at lambda={lam}, a={a}")


def conditional_triple_point(lam: float, rate: float | None = None, a: float = 0.01) -> dict[str, float]:
    """Exact conditional divergence and its two envelopes at one order.

    The upper envelope is the preset-2 conditional bound fed with the exact
    divergences of the unconditioned triple and its exact Q(S).
    """
    s, t = solve_conditional_triple(lam, rate, a)
    pair, subset = worst_case_conditional(s, t, a)
    cond, qs, _ = conditioned_pair(pair, subset)
    exact = renyi_divergence(cond.p, cond.p_prime, lam)
    fwd = accountant.RdpTable(((lam, renyi_divergence(pair.p, pair.p_prime, lam)),))
    bwd_order = lam - 1.0
    bwd = accountant.RdpTable(((bwd_order, renyi_divergence(pair.p_prime, pair.p, bwd_order)),)) \
        if bwd_order > 1.0 else accountant.ZCdp(0.0)
    upper = accountant.conditional_bound(fwd, bwd, qs, lam, holder=2).epsilon
    return {"lambda": lam, "s": s, "t": t, "exact": exact, "upper": upper,
            "lower": conditional_lower_formula(s, t, lam),
            "residual": float(np.max(np.abs(_triple_residual((s, t), lam, 0.1 * lam if rate is None else rate, a))))}


# ---------------------------------------------------------------------------
# Monte Carlo

_CHUNK = 1 << 21


def _mc_shard(cdf: np.ndarray, dist, n_trials: int, seed_seq: np.random.SeedSequence, n_out: int) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    counts = np.zeros(n_out + 1, dtype=np.int64)
    done = 0
    while done < n_trials:
        ks = kdist.sample_many(dist, rng, n_trials - done)
        # keep the uniform buffer bounded
        cum = np.cumsum(ks)
        take = max(1, int(np.searchsorted(cum, _CHUNK, side="right")))
        ks = ks[:take]
        u = rng.random(int(ks.sum()))
        best = kernels.best_of_k(cdf, ks, u)
        counts += np.bincount(best, minlength=n_out + 1)
        done += take
    return counts


def monte_carlo_best_of_k(q: Sequence[float], dist: RepetitionDistribution, trials: int, seed: int,
                          shards: int = 16, workers: int = 1) -> np.ndarray:
    """Empirical law of best-of-K by simulating the tuning loop.

    Trials are split over ``shards`` with seeds spawned from ``seed``; the
    merge is in shard order, so ``workers`` does not affect the result.
    """
    kdist._check_dist(dist)
    q = validate_pmf(q)
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    cdf = np.cumsum(q)
    n = len(q)
    sizes = [trials // shards + (1 if i < trials % shards else 0) for i in range(shards)]
    seqs = np.random.SeedSequence(seed).spawn(shards)
    jobs = [(cdf, dist, sizes[i], seqs[i], n) for i in range(shards) if sizes[i] > 0]
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda j: _mc_shard(*j), jobs))
    else:
        parts = [_mc_shard(*j) for j in jobs]
    counts = np.sum(parts, axis=0)
    freq = counts / float(trials)
    if kdist.pmf(dist, 0) > 0:
        return freq
    return freq[:n]


# ---------------------------------------------------------------------------
# Test corpus and the soundness matrix


@dataclasses.dataclass(frozen=True, eq=False)
class CorpusEntry:
    name: str
    family: str
    pair: FiniteMechanismPair


RR_EPSILONS = (0.1, 0.5, 1.0, 2.0)
SANDWICH_EPSILONS = (0.5, 1.0, 2.0)
TRIPLE_AS = (0.01, 0.25)
TRIPLE_ST = ((0.5, 0.5), (1.0, 0.5), (0.5, 2.0), (2.0, 1.0))
RANDOM_SEEDS = tuple(range(32))


def random_pair(seed: int, size: int = 5, max_log_ratio: float = 1.0) -> FiniteMechanismPair:
    rng = np.random.default_rng([seed, 17])
    p = rng.dirichlet(np.ones(size))
    pp = p * np.exp(rng.uniform(-max_log_ratio / 2, max_log_ratio / 2, size))
    return FiniteMechanismPair(p, pp / pp.sum())


def corpus(kind: str = "full") -> list[CorpusEntry]:
    """Named mechanism pairs: 'rr', 'sandwich', 'triple', 'random', or 'full'."""
    out: list[CorpusEntry] = []
    if kind in ("rr", "full"):
        out += [CorpusEntry(f"rr-eps={e:g}", "rr", worst_case_point_mass(e)) for e in RR_EPSILONS]
    if kind == "sandwich":
        out += [CorpusEntry(f"rr-eps={e:g}", "rr", worst_case_point_mass(e)) for e in SANDWICH_EPSILONS]
    if kind in ("triple", "full"):
        for a in TRIPLE_AS:
            for s, t in TRIPLE_ST:
                out.append(CorpusEntry(f"triple-a={a:g}-s={s:g}-t={t:g}", "triple", worst_case_conditional(s, t, a)[0]))
    if kind in ("random", "full"):
        out += [CorpusEntry(f"random-seed={s}", "random", random_pair(s)) for s in RANDOM_SEEDS]
    if not out:
        raise ValidationError(f"unknown corpus {kind!r}; choose full, sandwich, rr, triple or random")
    return out


SOUNDNESS_LAMBDAS = (1.5, 2.0, 3.0, 4.0, 8.0, 16.0, 32.0, 64.0)


def soundness_distributions() -> list[RepetitionDistribution]:
    dists: list[RepetitionDistribution] = [PointMass(k) for k in range(1, 11)]
    for eta in (-0.5, 0.0, 0.5, 1.0, 2.0):
        for m in (2.0, 10.0, 100.0):
            dists.append(kdist.tnb_with_mean(eta, m))
    dists += [Poisson(mu) for mu in (1.0, 10.0, 100.0)]
    for inner in (kdist.tnb_with_mean(1.0, 10.0), Poisson(10.0)):
        dists += [Truncated(inner, m) for m in (3, 10)]
    return dists


def dist_label(dist: RepetitionDistribution) -> str:
    if isinstance(dist, PointMass):
        return f"point(k={dist.k})"
    if isinstance(dist, TruncatedNegativeBinomial):
        return f"tnb(eta={dist.eta:g},gamma={dist.gamma:.6g})"
    if isinstance(dist, Poisson):
        return f"poisson(mu={dist.mu:g})"
    return f"truncated({dist_label(dist.inner)},m={dist.limit})"


def pair_curve(pair: FiniteMechanismPair, extra: Iterable[float] = ()) -> accountant.RdpTable:
    """Tightest RDP table for the pair: max of both directions on a grid plus inf."""
    orders = sorted(set(accountant.STANDARD_LAMBDAS) | {float(x) for x in extra} | set(SOUNDNESS_LAMBDAS))
    return accountant.RdpTable.closure((o, symmetric_divergence(pair.p, pair.p_prime, o)) for o in orders)


def bound_for(dist: RepetitionDistribution, pair: FiniteMechanismPair, curve: accountant.RdpTable,
              lam: float) -> tuple[float, str]:
    """The bound checked for one (instance, distribution, order) cell."""
    if isinstance(dist, PointMass):
        return accountant.generic_bound(dist, curve, lam), "generic"
    if isinstance(dist, TruncatedNegativeBinomial):
        return accountant.bound_tnb(curve, dist.eta, dist.gamma, lam).epsilon, "tnb"
    if isinstance(dist, Poisson):
        eps_hat = math.log1p(1.0 / (lam - 1.0))
        d_hat = max(hockey_stick(pair.p, pair.p_prime, eps_hat), hockey_stick(pair.p_prime, pair.p, eps_hat))
        eps = symmetric_divergence(pair.p, pair.p_prime, lam)
        return accountant.bound_poisson(eps, eps_hat, min(1.0, d_hat), dist.mu, lam), "poisson"
    return accountant.truncated_bound(dist.inner, dist.limit, curve, lam), "truncated"


SOUNDNESS_COLUMNS = ("instance", "dist", "lambda", "exact", "bound", "slack", "rule")


def soundness_rows(entries: Sequence[CorpusEntry], dists: Sequence[RepetitionDistribution] | None = None,
                   lambdas: Sequence[float] = SOUNDNESS_LAMBDAS) -> list[dict[str, Any]]:
    """Exact divergence of the repeated pair against the library bound, per cell."""
    dists = soundness_distributions() if dists is None else list(dists)
    rows = []
    for entry in entries:
        curve = pair_curve(entry.pair, lambdas)
        for dist in dists:
            a = repeated_max_distribution(entry.pair.p, dist)
            b = repeated_max_distribution(entry.pair.p_prime, dist)
            for lam in lambdas:
                exact = symmetric_divergence(a, b, lam)
                bound, rule = bound_for(dist, entry.pair, curve, lam)
                rows.append({"instance": entry.name, "dist": dist_label(dist), "lambda": lam,
                             "exact": exact, "bound": bound, "slack": bound - exact, "rule": rule})
    return rows


SANDWICH_KS = (1, 2, 3, 5, 10)
SANDWICH_LAMBDAS = SOUNDNESS_LAMBDAS + (math.inf,)


def sandwich_rows(epsilons: Sequence[float] = SANDWICH_EPSILONS, ks: Sequence[int] = SANDWICH_KS,
                  lambdas: Sequence[float] = SANDWICH_LAMBDAS) -> list[dict[str, Any]]:
    """lower <= exact <= upper for k runs of randomized response."""
    rows = []
    for eps in epsilons:
        pair = worst_case_point_mass(eps)
        for k in ks:
            dist = PointMass(k)
            a = repeated_max_distribution(pair.p, dist)
            b = repeated_max_distribution(pair.p_prime, dist)
            for lam in lambdas:
                exact = symmetric_divergence(a, b, lam)
                upper = accountant.bound_point_mass(accountant.PureDp(eps), k, lam)
                lower = accountant.lower_bound_point_mass(eps, k, lam)
                rows.append({"instance": f"rr-eps={eps:g}", "dist": dist_label(dist), "lambda": lam,
                             "exact": exact, "bound": upper, "slack": upper - exact,
                             "rule": "point_mass", "lower": lower})
    return rows
