"""Private hyperparameter tuning by random repetition.

``tune`` draws K from a repetition distribution, runs K uniformly chosen
candidates and returns the best run with a certified privacy report.
``tune_until_success`` runs until a pre-declared score threshold is met.
``selection_demo`` runs the private-selection example (repeated noisy
scores versus the exponential mechanism).

Randomness is derived from the master seed only: K from stream (seed, 0),
candidate choices from (seed, 1), per-run seeds from (seed, 2). Reduction is
by run index, so the worker count cannot change the report.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import functools
import importlib
import json
import logging
import math
import os
import subprocess
import sys
import tempfile
import time
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy import optimize

from dptune import accountant, kdist
from dptune.accountant import PrivacyCurve, TuningBound
from dptune.errors import ParameterError, ValidationError
from dptune.kdist import PointMass, Poisson, RepetitionDistribution, Truncated, TruncatedNegativeBinomial

log = logging.getLogger(__name__)

NO_OUTPUT = -math.inf
_SEED_BOUND = 2 ** 63 - 1


class CandidateFailure(RuntimeError):
    """A candidate run did not produce a valid score."""


@dataclasses.dataclass(frozen=True)
class CandidateSpec:
    """One hyperparameter setting.

    Exactly one of ``command`` (argv for the subprocess protocol; the token
    "{python}" expands to the running interpreter) or ``fn`` (called as
    ``fn(hyperparameters, seed, run_index)``) must be given.
    """

    id: str
    hyperparameters: Mapping[str, Any]
    command: tuple[str, ...] | None = None
    fn: Callable[..., Any] | None = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("candidate id must be a non-empty string")
        if (self.command is None) == (self.fn is None):
            raise ValidationError(f"candidate {self.id!r} needs exactly one of command or fn")
        if self.command is not None:
            object.__setattr__(self, "command", tuple(str(c) for c in self.command))


@dataclasses.dataclass(frozen=True)
class TrialResult:
    run_index: int
    candidate_id: str
    score: float
    payload: str
    duration: float
    seed_used: int

    def to_json(self) -> dict[str, Any]:
        # duration is left out so reports are reproducible byte for byte
        return {"run_index": self.run_index, "candidate_id": self.candidate_id,
                "score": _score_json(self.score), "payload": self.payload, "seed_used": self.seed_used}


def _score_json(score: float):
    return None if score == NO_OUTPUT else score


@dataclasses.dataclass(frozen=True)
class TuningJobReport:
    best: TrialResult | None
    k_drawn: int
    trials: tuple[TrialResult, ...]
    distribution: RepetitionDistribution | None
    privacy: TuningBound | None
    master_seed: int
    aborted: bool = False
    privacy_outside_model: bool = False
    succeeded: bool | None = None

    @property
    def all_scores(self) -> tuple[float, ...]:
        return tuple(t.score for t in self.trials)

    def to_json(self) -> dict[str, Any]:
        out = {
            "master_seed": self.master_seed,
            "k_drawn": self.k_drawn,
            "distribution": None if self.distribution is None else kdist.to_json(self.distribution),
            "best": None if self.best is None else self.best.to_json(),
            "all_scores": [_score_json(s) for s in self.all_scores],
            "trials": [t.to_json() for t in self.trials],
            "privacy": None if self.privacy is None else self.privacy.to_json(),
            "aborted": self.aborted,
            "privacy_outside_model": self.privacy_outside_model,
        }
        if self.succeeded is not None:
            out["succeeded"] = self.succeeded
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Running candidates


def _resolve_callable(spec: str) -> Callable[..., Any]:
    mod, _, name = spec.partition(":")
    if not mod or not name:
        raise ValidationError(f"callable must look like 'module:function', got {spec!r}")
    try:
        return getattr(importlib.import_module(mod), name)
    except (ImportError, AttributeError) as exc:
        raise ValidationError(f"cannot import {spec!r}: {exc}") from None


def _parse_outcome(value: Any) -> tuple[float, str]:
    if isinstance(value, dict):
        score, payload = value.get("score"), value.get("payload", "")
    elif isinstance(value, tuple) and len(value) == 2:
        score, payload = value
    else:
        score, payload = value, ""
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        raise CandidateFailure(f"score is not a number: {score!r}")
    score = float(score)
    if math.isnan(score) or math.isinf(score):
        raise CandidateFailure(f"score must be finite, got {score}")
    if not isinstance(payload, str):
        raise CandidateFailure("payload must be a string")
    return score, payload


def run_subprocess(command: Sequence[str], hyperparameters: Mapping[str, Any], seed: int, run_index: int,
                   timeout: float | None = None) -> tuple[float, str]:
    """One run under the subprocess protocol, in a private temporary directory."""
    argv = [sys.executable if c == "{python}" else c for c in command]
    doc = json.dumps({"hyperparameters": dict(hyperparameters), "seed": seed, "run_index": run_index},
                     sort_keys=True)
    with tempfile.TemporaryDirectory(prefix="dptune-run-") as cwd:
        try:
            proc = subprocess.run(argv, input=doc, capture_output=True, text=True, timeout=timeout, cwd=cwd,
                                  env={**os.environ, "PYTHONPATH": os.pathsep.join(sys.path)})
        except subprocess.TimeoutExpired:
            raise CandidateFailure("timed out") from None
        except OSError as exc:
            raise CandidateFailure(f"could not start: {exc}") from None
    if proc.returncode != 0:
        raise CandidateFailure(f"exit status {proc.returncode}")
    try:
        out = json.loads(proc.stdout)
    except json.JSONDecodeError:
        raise CandidateFailure("standard output is not a single JSON document") from None
    if not isinstance(out, dict) or "score" not in out:
        raise CandidateFailure('output must be {"score": ..., "payload": ...}')
    return _parse_outcome(out)


def _run_one(cand: CandidateSpec, run_index: int, seed: int, deadline: float | None) -> tuple[TrialResult, bool]:
    """Returns the trial and whether it was cut by the wall-clock cap."""
    start = time.monotonic()
    if deadline is not None and start >= deadline:
        return TrialResult(run_index, cand.id, NO_OUTPUT, "", 0.0, seed), True
    try:
        if cand.command is not None:
            timeout = None if deadline is None else max(deadline - start, 1e-3)
            score, payload = run_subprocess(cand.command, cand.hyperparameters, seed, run_index, timeout)
        else:
            score, payload = _parse_outcome(cand.fn(dict(cand.hyperparameters), seed, run_index))
    except Exception as exc:  # a crash must not abort the job
        log.warning("run %d (candidate %s) failed: %s", run_index, cand.id, exc)
        score, payload = NO_OUTPUT, ""
    end = time.monotonic()
    cut = deadline is not None and end > deadline
    return TrialResult(run_index, cand.id, score, payload, end - start, seed), cut


def _check_candidates(candidates: Sequence[CandidateSpec]) -> list[CandidateSpec]:
    cands = list(candidates)
    if not cands:
        raise ValidationError("at least one candidate is required")
    ids = [c.id for c in cands]
    if len(set(ids)) != len(ids):
        raise ValidationError("candidate ids must be unique")
    return cands


def _best(trials: Sequence[TrialResult]) -> TrialResult | None:
    best = None
    for t in trials:  # trials are in run_index order; strict > keeps the earliest on ties
        if best is None or t.score > best.score:
            best = t
    return best


def derive_plan(seed: int, k: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Candidate index and seed for runs 0..k-1; prefixes agree across k."""
    choices = np.random.default_rng([seed, 1]).integers(0, m, size=k)
    seeds = np.random.default_rng([seed, 2]).integers(0, _SEED_BOUND, size=k, dtype=np.int64)
    return choices, seeds


def tune(candidates: Sequence[CandidateSpec], dist: RepetitionDistribution, base_guarantee: PrivacyCurve,
         seed: int, workers: int = 1, wall_clock_cap: float | None = None, k_cap: int | None = None,
         lambdas: Sequence[float] | None = None, delta: float | None = None) -> TuningJobReport:
    """Run the repeated random-search job.

    The privacy report is computed before any run (so inapplicable settings
    fail early) for the distribution actually executed: ``Truncated(dist,
    k_cap)`` when a cap is given. A job cut by ``wall_clock_cap`` reports no
    best run and no privacy bound.
    """
    cands = _check_candidates(candidates)
    kdist._check_dist(dist)
    if workers < 1:
        raise ParameterError("workers must be >= 1")
    executed = dist if k_cap is None else Truncated(dist, int(k_cap))
    privacy = accountant.tuning_bound(executed, base_guarantee, lambdas, delta)
    k = int(kdist.sample(executed, np.random.default_rng([seed, 0])))
    choices, seeds = derive_plan(seed, k, len(cands))
    deadline = None if wall_clock_cap is None else time.monotonic() + float(wall_clock_cap)
    jobs = [(cands[int(choices[i])], i, int(seeds[i]), deadline) for i in range(k)]
    if workers > 1 and k > 1:
        with concurrent.futures.ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda j: _run_one(*j), jobs))
    else:
        results = [_run_one(*j) for j in jobs]
    trials = tuple(r[0] for r in results)
    aborted = any(r[1] for r in results)
    if aborted:
        log.warning("wall-clock cap reached; the job has no analyzed distribution and reports no privacy bound")
        return TuningJobReport(None, k, trials, executed, None, seed, aborted=True)
    return TuningJobReport(_best(trials), k, trials, executed, privacy, seed)


@functools.lru_cache(maxsize=256)
def _conditional_privacy(d_fwd, d_bwd, qs_lower, lambdas, delta) -> TuningBound:
    return accountant.conditional_tuning_bound(d_fwd, d_bwd, qs_lower, lambdas, delta)


def tune_until_success(candidates: Sequence[CandidateSpec], accept: float, d_fwd: PrivacyCurve,
                       d_bwd: PrivacyCurve, qs_lower: float, seed: int, max_attempts: int = 10000,
                       lambdas: Sequence[float] | None = None, delta: float | None = None) -> TuningJobReport:
    """Run single attempts until a score reaches ``accept``.

    Privacy comes from the conditional-sampling bound with automatic Holder
    exponents and the caller's lower bound ``qs_lower`` on the acceptance
    probability. Hitting ``max_attempts`` returns no output and marks the
    privacy claim as outside the analyzed model.
    """
    cands = _check_candidates(candidates)
    qs_lower = float(qs_lower)
    if not 0.0 < qs_lower <= 1.0:
        raise ParameterError(f"qs_lower must lie in (0, 1], got {qs_lower}")
    if max_attempts < 1:
        raise ParameterError("max_attempts must be >= 1")
    lams = None if lambdas is None else tuple(lambdas)
    privacy = _conditional_privacy(d_fwd, d_bwd, qs_lower, lams, delta)
    choice_rng = np.random.default_rng([seed, 1])
    seed_rng = np.random.default_rng([seed, 2])
    trials = []
    accepted = None
    for i in range(max_attempts):
        cand = cands[int(choice_rng.integers(0, len(cands)))]
        run_seed = int(seed_rng.integers(0, _SEED_BOUND, dtype=np.int64))
        trial, _ = _run_one(cand, i, run_seed, None)
        trials.append(trial)
        if trial.score >= accept:
            accepted = trial
            break
    if accepted is None:
        return TuningJobReport(None, len(trials), tuple(trials), None, privacy, seed,
                               privacy_outside_model=True, succeeded=False)
    return TuningJobReport(accepted, len(trials), tuple(trials), None, privacy, seed, succeeded=True)


# ---------------------------------------------------------------------------
# Job configs


def candidates_from_json(items: Sequence[Mapping[str, Any]]) -> list[CandidateSpec]:
    out = []
    for item in items:
        if not isinstance(item, Mapping) or "id" not in item:
            raise ValidationError("each candidate needs an 'id'")
        fn = _resolve_callable(item["callable"]) if "callable" in item else None
        command = item.get("command")
        if isinstance(command, str):
            command = (command,)
        out.append(CandidateSpec(str(item["id"]), dict(item.get("hyperparameters", {})),
                                 None if command is None else tuple(command), fn))
    return out


@dataclasses.dataclass(frozen=True)
class JobConfig:
    candidates: tuple[CandidateSpec, ...]
    distribution: RepetitionDistribution
    base_guarantee: PrivacyCurve
    seed: int
    options: Mapping[str, Any]


_OPTION_KEYS = {"workers", "wall_clock_cap", "k_cap", "lambdas", "delta"}


def load_job(path: str) -> JobConfig:
    """Read a job file: {"candidates", "distribution", "base_guarantee", "seed", "options"}."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read job config {path!r}: {exc}") from None
    return job_from_json(doc)


def job_from_json(doc: Mapping[str, Any]) -> JobConfig:
    missing = [k for k in ("candidates", "distribution", "base_guarantee", "seed") if k not in doc]
    if missing:
        raise ValidationError(f"job config is missing {', '.join(missing)}")
    options = dict(doc.get("options", {}))
    unknown = set(options) - _OPTION_KEYS
    if unknown:
        raise ValidationError(f"unknown job options: {', '.join(sorted(unknown))}")
    return JobConfig(tuple(candidates_from_json(doc["candidates"])), kdist.from_json(doc["distribution"]),
                     accountant.curve_from_json(doc["base_guarantee"]), int(doc["seed"]), options)


def run_job(cfg: JobConfig, seed: int | None = None, workers: int | None = None) -> TuningJobReport:
    opts = dict(cfg.options)
    if workers is not None:
        opts["workers"] = workers
    return tune(cfg.candidates, cfg.distribution, cfg.base_guarantee, cfg.seed if seed is None else seed, **opts)


# ---------------------------------------------------------------------------
# Private selection demo

DIRECT_LIMIT = 100_000


@dataclasses.dataclass(frozen=True)
class SelectionResult:
    index: int
    noisy_score: float | None
    mechanism: str
    k_drawn: int | None
    privacy_epsilon: float
    privacy_order: float

    def to_json(self) -> dict[str, Any]:
        return {"index": self.index, "noisy_score": self.noisy_score, "mechanism": self.mechanism,
                "k_drawn": self.k_drawn, "privacy": {"epsilon": self.privacy_epsilon,
                                                     "lambda": accountant._num(self.privacy_order)}}


def selection_privacy(dist: RepetitionDistribution | None, epsilon: float) -> tuple[float, float]:
    """(epsilon', order) for the selection demo; order inf means pure DP."""
    if dist is None:
        return epsilon, math.inf
    if isinstance(dist, TruncatedNegativeBinomial):
        return accountant.bound_tnb_pure(epsilon, dist.eta), math.inf
    if isinstance(dist, PointMass):
        return dist.k * epsilon, math.inf
    if isinstance(dist, Poisson):
        eps, _, lam_max = accountant.approx_poisson(epsilon, 0.0, dist.mu)
        return eps, lam_max
    raise ParameterError("the selection demo supports point, tnb and poisson distributions")


def _laplace_sf(z: np.ndarray, eps: float) -> np.ndarray:
    return np.where(z >= 0, 0.5 * np.exp(-eps * np.maximum(z, 0.0)), 1.0 - 0.5 * np.exp(eps * np.minimum(z, 0.0)))


def _max_of_k(u: np.ndarray, eps: float, k: int, rng: np.random.Generator) -> tuple[int, float]:
    """Exact draw of the best of k (uniform index, noisy score) pairs without
    simulating every run: the best noisy score x solves S(x) = 1 - V^(1/k)
    for the mixture survival S, and the winning index has density
    proportional to the Laplace density at x - u_j.
    """
    v = rng.random()
    target = -math.expm1(math.log(v) / k) if v > 0 else 1.0
    log_target = math.log(target)

    def g(x):
        return math.log(float(np.mean(_laplace_sf(x - u, eps)))) - log_target

    lo = float(u.min()) - 1.0 / eps
    while g(lo) < 0:
        lo -= 10.0 / eps
    hi = float(u.max()) + 1.0 / eps
    while g(hi) > 0:
        hi += 10.0 / eps
    x = optimize.brentq(g, lo, hi, xtol=1e-12, rtol=1e-15)
    w = np.exp(-eps * np.abs(x - u))
    j = int(rng.choice(len(u), p=w / w.sum()))
    return j, float(x)


def selection_demo(utilities: Sequence[float], epsilon: float, dist: RepetitionDistribution | None = None,
                   mechanism: str = "repeated", seed: int | Sequence[int] = 0) -> SelectionResult:
    """One private selection.

    mechanism "repeated": K ~ dist runs of (uniform index j, u_j + Laplace(1/epsilon)),
    keep the highest noisy score. mechanism "exponential": Pr[j] proportional
    to exp(epsilon u_j / 2).
    """
    u = np.asarray(utilities, dtype=float)
    if u.ndim != 1 or u.size == 0 or not np.all(np.isfinite(u)):
        raise ValidationError("utilities must be a non-empty vector of finite reals")
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise ParameterError(f"epsilon must be a positive real, got {epsilon}")
    rng = np.random.default_rng(seed)
    if mechanism == "exponential":
        logits = 0.5 * epsilon * u
        p = np.exp(logits - logits.max())
        j = int(rng.choice(len(u), p=p / p.sum()))
        return SelectionResult(j, None, "exponential", None, float(epsilon), math.inf)
    if mechanism != "repeated":
        raise ParameterError(f"mechanism must be 'repeated' or 'exponential', got {mechanism!r}")
    if dist is None:
        raise ParameterError("the repeated mechanism needs a repetition distribution")
    priv, order = selection_privacy(dist, epsilon)
    k = int(kdist.sample(dist, rng))
    if k == 0:
        return SelectionResult(-1, None, "repeated", 0, priv, order)
    if k <= DIRECT_LIMIT:
        idx = rng.integers(0, len(u), size=k)
        noisy = u[idx] + rng.laplace(0.0, 1.0 / epsilon, size=k)
        best = int(np.argmax(noisy))
        return SelectionResult(int(idx[best]), float(noisy[best]), "repeated", k, priv, order)
    j, x = _max_of_k(u, epsilon, k, rng)
    return SelectionResult(j, x, "repeated", k, priv, order)


def selection_trials(utilities: Sequence[float], epsilon: float, dist: RepetitionDistribution | None,
                     mechanism: str, jobs: int, seed: int) -> dict[str, Any]:
    """Run ``jobs`` independent selections (job i seeded with (seed, i)).

    Reports how often the chosen utility is within (20/epsilon) log m of the
    best one, next to the privacy cost of both mechanisms.
    """
    if jobs < 1:
        raise ParameterError("jobs must be >= 1")
    u = np.asarray(utilities, dtype=float)
    margin = 20.0 / epsilon * math.log(len(u)) if len(u) > 1 else 0.0
    threshold = float(u.max()) - margin
    counts = np.zeros(len(u), dtype=np.int64)
    hits = 0
    results = []
    for i in range(jobs):
        res = selection_demo(u, epsilon, dist, mechanism, seed=(seed, i))
        results.append(res)
        if res.index >= 0:
            counts[res.index] += 1
            hits += bool(u[res.index] >= threshold)
    priv, order = results[0].privacy_epsilon, results[0].privacy_order
    return {"jobs": jobs, "mechanism": mechanism, "threshold": threshold, "hit_rate": hits / jobs,
            "index_counts": counts.tolist(), "privacy": {"epsilon": priv, "lambda": accountant._num(order)},
            "exponential_mechanism_epsilon": float(epsilon),
            "first": results[0].to_json()}
