"""Command-line interface.

Exit codes: 0 success, 1 soundness violation (verify), 2 usage or
validation error. Errors print one line to standard error of the form
``error: <kind>: <message>``.

Inline privacy curves:   pure:EPS  zcdp:RHO  rdp:2=0.5,4=0.8,inf=3  approx:EPS,DELTA
Inline distributions:    point:K  poisson:MU  tnb:eta=E,gamma=G  tnb:eta=E,mean=M
                         geometric:gamma=G|mean=M  logarithmic:gamma=G|mean=M
                         truncated:LIMIT:<inline distribution>
Either may also be a JSON object or the path of a JSON file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from typing import Any, Callable, Sequence

from dptune import accountant, kdist, oracle, tuner, utility
from dptune.errors import DptuneError, ParameterError, ValidationError

FIGURES = ("rdp_curves", "rdp_compare", "adp_vs_mean", "quantile_vs_eps", "beta_vs_eps", "conditional_bounds")
DEFAULT_BASE = "zcdp:0.1"
DEFAULT_DELTA = 1e-6
DEFAULT_MEANS = (2.0, 10.0, 100.0)
DEFAULT_MEAN_LADDER = (2.0, 3.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0)
DEFAULT_CONDITIONAL_LAMBDAS = (2.0, 4.0, 8.0, 16.0, 32.0)
VIOLATION_TOL = 1e-9


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"error: usage: {message}\n")
        sys.exit(2)


# ---------------------------------------------------------------------------
# Inline specs


def _load_json_arg(text: str):
    if text.lstrip().startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"bad JSON: {exc}") from None
    if text.endswith(".json") or os.path.isfile(text):
        try:
            with open(text) as fh:
                return json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read {text!r}: {exc}") from None
    return None


def _float(text: str, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"{what} must be a number, got {text!r}") from None


def _keyvals(body: str) -> dict[str, str]:
    out = {}
    for part in filter(None, body.split(",")):
        key, sep, val = part.partition("=")
        if not sep:
            raise ValidationError(f"expected key=value, got {part!r}")
        out[key.strip()] = val.strip()
    return out


def parse_curve(text: str) -> accountant.PrivacyCurve:
    doc = _load_json_arg(text)
    if doc is not None:
        return accountant.curve_from_json(doc)
    kind, _, body = text.partition(":")
    kind = kind.strip().lower()
    if kind == "pure":
        return accountant.PureDp(_float(body, "epsilon"))
    if kind == "zcdp":
        return accountant.ZCdp(_float(body, "rho"))
    if kind == "rdp":
        pts = tuple((_float(k, "order"), _float(v, "epsilon")) for k, v in _keyvals(body).items())
        return accountant.RdpTable(pts)
    if kind == "approx":
        parts = body.split(",")
        if len(parts) != 2:
            raise ValidationError("approx needs EPS,DELTA")
        return accountant.ApproxDp(_float(parts[0], "epsilon"), _float(parts[1], "delta"))
    raise ValidationError(f"unknown privacy curve {text!r}")


def parse_dist(text: str) -> kdist.RepetitionDistribution:
    doc = _load_json_arg(text)
    if doc is not None:
        return kdist.from_json(doc)
    fam, _, body = text.partition(":")
    fam = fam.strip().lower()
    if fam == "point":
        try:
            return kdist.PointMass(int(body))
        except ValueError:
            raise ValidationError(f"point needs an integer, got {body!r}") from None
    if fam == "poisson":
        return kdist.Poisson(_float(body, "mu"))
    if fam == "truncated":
        limit, _, inner = body.partition(":")
        try:
            return kdist.Truncated(parse_dist(inner), int(limit))
        except ValueError:
            raise ValidationError(f"truncated needs LIMIT:<distribution>, got {body!r}") from None
    if fam in ("tnb", "geometric", "logarithmic"):
        obj: dict[str, Any] = {"family": fam}
        for k, v in _keyvals(body).items():
            if k not in ("eta", "gamma", "mean"):
                raise ValidationError(f"unknown {fam} field {k!r}")
            obj[k] = _float(v, k)
        return kdist.from_json(obj)
    raise ValidationError(f"unknown distribution {text!r}")


def parse_floats(text: str, what: str) -> tuple[float, ...]:
    vals = tuple(_float(t, what) for t in text.split(",") if t.strip())
    if not vals:
        raise ValidationError(f"empty {what} list")
    return vals


def parse_objective(text: str | None):
    if text is None or text == "max_mean":
        return None
    kind, _, body = text.partition(":")
    if kind == "mean":
        return ("mean", _float(body, "target mean"))
    if kind == "beta":
        vals = parse_floats(body, "beta target")
        if len(vals) != 2:
            raise ValidationError("beta objective needs beta:BETA,P")
        return ("beta", vals[0], vals[1])
    raise ValidationError(f"objective must be max_mean, mean:M or beta:B,P; got {text!r}")


# ---------------------------------------------------------------------------
# Output


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    parent = os.path.dirname(out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(out, "w", newline="") as fh:
        fh.write(text)


def _dumps(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _rows_csv(columns: Sequence[str], rows: Sequence[dict[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row.get(c, "")) for c in columns])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _rows_json(rows: Sequence[dict[str, Any]]) -> list[dict[str, Any]]:
    def clean(v):
        return accountant._num(v) if isinstance(v, float) else v
    return [{k: clean(v) for k, v in r.items()} for r in rows]


# ---------------------------------------------------------------------------
# Subcommands


def _lambdas(args) -> tuple[float, ...] | None:
    return None if args.lambda_grid is None else parse_floats(args.lambda_grid, "lambda")


def cmd_account(args) -> int:
    base = parse_curve(args.base)
    dist = parse_dist(args.dist)
    tb = accountant.tuning_bound(dist, base, _lambdas(args), args.delta)
    _emit(tb.to_csv() if args.format == "csv" else _dumps(tb.to_json()), args.out)
    return 0


def cmd_utility(args) -> int:
    dist = parse_dist(args.dist)
    ks = tuple(int(k) for k in parse_floats(args.tail_ks, "tail k")) if args.tail_ks else utility.DEFAULT_TAIL_KS
    summary = utility.utility_summary(dist, args.p, ks)
    _emit(summary.to_csv() if args.format == "csv" else _dumps(summary.to_json()), args.out)
    return 0


def cmd_calibrate(args) -> int:
    res = utility.calibrate(parse_curve(args.base), args.family, (args.epsilon, args.delta),
                            parse_objective(args.objective), eta=args.eta, summary_p=args.p)
    if res.warning:
        sys.stderr.write(f"warning: {res.warning}\n")
    if args.format == "csv":
        _emit(res.bound.to_csv(), args.out)
    else:
        _emit(_dumps(res.to_json()), args.out)
    return 0


def _report_out(report: tuner.TuningJobReport, args) -> None:
    if args.format == "csv":
        rows = [t.to_json() for t in report.trials]
        _emit(_rows_csv(("run_index", "candidate_id", "score", "payload", "seed_used"), rows), args.out)
    else:
        _emit(report.dumps(), args.out)


def cmd_tune(args) -> int:
    cfg = tuner.load_job(args.config)
    report = tuner.run_job(cfg, seed=args.seed, workers=args.workers)
    _report_out(report, args)
    return 0


def cmd_until_success(args) -> int:
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {args.config!r}: {exc}") from None
    if "candidates" not in doc:
        raise ValidationError("config is missing candidates")
    cands = tuner.candidates_from_json(doc["candidates"])
    fwd = doc.get("base_forward", doc.get("base_guarantee"))
    if fwd is None:
        raise ValidationError("config needs base_guarantee or base_forward/base_backward")
    bwd = doc.get("base_backward", fwd)
    accept = args.accept if args.accept is not None else doc.get("accept")
    qs = args.qs_lower if args.qs_lower is not None else doc.get("qs_lower")
    if accept is None or qs is None:
        raise ValidationError("accept and qs_lower are required")
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    max_attempts = args.max_attempts if args.max_attempts is not None else int(doc.get("max_attempts", 10000))
    lams = doc.get("lambdas")
    report = tuner.tune_until_success(cands, float(accept), accountant.curve_from_json(fwd),
                                      accountant.curve_from_json(bwd), float(qs), seed, max_attempts,
                                      lambdas=None if lams is None else [accountant._unnum(x) for x in lams],
                                      delta=doc.get("delta"))
    _report_out(report, args)
    return 0


def cmd_select_demo(args) -> int:
    u = parse_floats(args.utilities, "utility")
    dist = None if args.mechanism == "exponential" else parse_dist(args.dist)
    seed = 0 if args.seed is None else args.seed
    summary = tuner.selection_trials(u, args.epsilon, dist, args.mechanism, args.jobs, seed)
    if args.format == "csv":
        rows = [{"index": i, "utility": u[i], "count": c} for i, c in enumerate(summary["index_counts"])]
        _emit(_rows_csv(("index", "utility", "count"), rows), args.out)
    else:
        _emit(_dumps(summary), args.out)
    return 0


# figures ------------------------------------------------------------------


def _family_member(token: str) -> tuple[str, Callable[[float], kdist.RepetitionDistribution]]:
    token = token.strip().lower()
    if token == "logarithmic":
        return token, lambda m: kdist.tnb_with_mean(0.0, m)
    if token == "geometric":
        return token, lambda m: kdist.tnb_with_mean(1.0, m)
    if token == "poisson":
        return token, kdist.Poisson
    if token == "point":
        return token, lambda m: kdist.PointMass(int(round(m)))
    if token.startswith("tnb:"):
        eta = _float(token[4:], "eta")
        return f"tnb_eta{eta:g}", lambda m: kdist.tnb_with_mean(eta, m)
    raise ValidationError(f"unknown family {token!r}; use logarithmic, geometric, poisson, point or tnb:ETA")


def _families(text: str) -> list[tuple[str, Callable[[float], kdist.RepetitionDistribution]]]:
    return [_family_member(t) for t in text.split(";") if t.strip()]


def _series(name: str, points) -> tuple[str, list[tuple[float, float]]]:
    return name, [(float(x), float(y)) for x, y in points]


def figure_series(figure: str, base: accountant.PrivacyCurve, families: str, means: Sequence[float],
                  delta: float, lambdas: Sequence[float] | None, ps: Sequence[float], a: float,
                  rate_coef: float) -> list[tuple[str, list[tuple[float, float]]]]:
    """All series of one figure as (name, [(x, y), ...]); values come straight from the library."""
    lams = accountant.STANDARD_LAMBDAS if lambdas is None else tuple(lambdas)
    fams = _families(families)
    out = []
    if figure in ("rdp_curves", "rdp_compare"):
        out.append(_series("base", ((l, accountant.eval_curve(base, l)) for l in lams)))
        for m in means:
            k = int(round(m))
            if k >= 1:
                out.append(_series(f"composition_k{k}",
                                   ((l, accountant.naive_composition(base, k, l)) for l in lams)))
            for name, member in fams:
                tb = accountant.tuning_bound(member(m), base, lams)
                out.append(_series(f"{name}_mean{m:g}", ((p.lam, p.epsilon) for p in tb.points)))
    elif figure == "adp_vs_mean":
        comp = []
        for m in means:
            k = int(round(m))
            if k >= 1:
                comp.append((m, accountant.tuning_bound(kdist.PointMass(k), base, lams, delta).approx_dp[0]))
        out.append(_series("composition", comp))
        for name, member in fams:
            out.append(_series(name, ((m, accountant.tuning_bound(member(m), base, lams, delta).approx_dp[0])
                                      for m in means)))
    elif figure in ("quantile_vs_eps", "beta_vs_eps"):
        for name, member in fams:
            dists = [member(m) for m in means]
            eps = [accountant.tuning_bound(d, base, lams, delta).approx_dp[0] for d in dists]
            if figure == "quantile_vs_eps":
                out.append(_series(f"{name}_quantile", zip(eps, (utility.expected_quantile(d) for d in dists))))
            for p in ps:
                out.append(_series(f"{name}_beta_p{p:g}",
                                   zip(eps, (utility.success_probability(d, p) for d in dists))))
    elif figure == "conditional_bounds":
        lams = DEFAULT_CONDITIONAL_LAMBDAS if lambdas is None else tuple(lambdas)
        pts = [oracle.conditional_triple_point(l, rate_coef * l, a) for l in lams]
        out.append(_series("upper_bound", ((p["lambda"], p["upper"]) for p in pts)))
        out.append(_series("exact_lower", ((p["lambda"], p["exact"]) for p in pts)))
    else:
        raise ValidationError(f"unknown figure {figure!r}")
    return out


def _series_csv(name: str, pts: list[tuple[float, float]]) -> str:
    return _rows_csv(("x", "y", "series"), [{"x": x, "y": y, "series": name} for x, y in pts])


def cmd_figures(args) -> int:
    base = parse_curve(args.base)
    if not 0.0 < args.delta < 1.0:
        raise ParameterError("delta must lie in (0, 1)")
    ps = parse_floats(args.p, "p")
    means = parse_floats(args.means, "mean") if args.means else (
        DEFAULT_MEANS if args.figure in ("rdp_curves", "rdp_compare") else DEFAULT_MEAN_LADDER)
    if args.figure == "rdp_compare" and not args.means:
        means = (10.0,)
    families = args.families or ("logarithmic;geometric;tnb:-0.5;tnb:0.5;tnb:2;poisson"
                                 if args.figure == "rdp_compare" else
                                 "logarithmic;geometric;poisson" if args.figure != "rdp_curves" else "logarithmic")
    series = figure_series(args.figure, base, families, means, args.delta, _lambdas(args), ps, args.a,
                           args.rate_coef)
    if args.out is None:
        body = "".join(_series_csv(n, p) if i == 0 else _series_csv(n, p).split("\n", 1)[1]
                       for i, (n, p) in enumerate(series))
        sys.stdout.write(body)
        return 0
    os.makedirs(args.out, exist_ok=True)
    for name, pts in series:
        with open(os.path.join(args.out, f"{args.figure}__{name}.csv"), "w", newline="") as fh:
            fh.write(_series_csv(name, pts))
    return 0


# verify -------------------------------------------------------------------

VERIFY_COLUMNS = oracle.SOUNDNESS_COLUMNS + ("lower",)


def verify_rows(kind: str) -> list[dict[str, Any]]:
    rows = oracle.soundness_rows(oracle.corpus(kind))
    if kind in ("sandwich", "full"):
        rows += oracle.sandwich_rows()
    return rows


def violations(rows: Sequence[dict[str, Any]], tol: float = VIOLATION_TOL) -> list[dict[str, Any]]:
    bad = []
    for r in rows:
        if r["slack"] < -tol or ("lower" in r and r["lower"] > r["exact"] + tol):
            bad.append(r)
    return bad


def cmd_verify(args) -> int:
    rows = verify_rows(args.corpus)
    if args.format == "json":
        _emit(_dumps(_rows_json(rows)), args.out)
    else:
        _emit(_rows_csv(VERIFY_COLUMNS, rows), args.out)
    bad = violations(rows)
    if bad:
        worst = min(bad, key=lambda r: r["slack"])
        sys.stderr.write(f"error: soundness: {len(bad)} violating rows; worst {worst['instance']} "
                         f"{worst['dist']} lambda={worst['lambda']} slack={worst['slack']!r}\n")
        return 1
    sys.stderr.write(f"ok: {len(rows)} rows, minimum slack {min(r['slack'] for r in rows)!r}\n")
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(None), help="master seed (default: config seed or 0)")
    p.add_argument("--out", default=d(None), help="output file (a directory for figures); default stdout")
    p.add_argument("--format", choices=("json", "csv"), default=d(None),
                   help="output format (default json; csv for verify)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dptune", description="Private hyperparameter tuning by random repetition.",
                     epilog="exit codes: 0 ok, 1 soundness violation, 2 usage or validation error",
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text, fn):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        _add_globals(sp, suppress=True)
        sp.set_defaults(func=fn)
        return sp

    sp = add("account", "certified Renyi curve of a repeated base algorithm", cmd_account)
    sp.add_argument("--base", required=True, help="base guarantee (pure:EPS, zcdp:RHO, rdp:..., approx:..., JSON)")
    sp.add_argument("--dist", required=True, help="repetition distribution (inline or JSON)")
    sp.add_argument("--lambda-grid", help="comma-separated orders (default: standard grid plus inf)")
    sp.add_argument("--delta", type=float, help="attach the (epsilon, delta) conversion at this delta")

    sp = add("utility", "expected quantile, success probability and tail bounds", cmd_utility)
    sp.add_argument("--dist", required=True)
    sp.add_argument("--p", type=float, default=0.01, help="per-run success probability (default 0.01)")
    sp.add_argument("--tail-ks", help="comma-separated k for Pr[K >= k] bounds")

    sp = add("calibrate", "choose gamma or mu for an (epsilon, delta) budget", cmd_calibrate)
    sp.add_argument("--base", default=DEFAULT_BASE)
    sp.add_argument("--family", choices=("tnb", "poisson"), required=True)
    sp.add_argument("--epsilon", type=float, required=True)
    sp.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    sp.add_argument("--eta", type=float, default=0.0, help="TNB shape (default 0, logarithmic)")
    sp.add_argument("--objective", help="max_mean (default), mean:M or beta:B,P")
    sp.add_argument("--p", type=float, default=0.01, help="per-run success probability for the summary")

    sp = add("tune", "run a tuning job from a JSON config", cmd_tune)
    sp.add_argument("config")
    sp.add_argument("--workers", type=int, help="override the config's worker count")

    sp = add("until-success", "run until a score threshold is met", cmd_until_success)
    sp.add_argument("config", help="JSON: candidates, base_guarantee (or base_forward/base_backward), "
                                   "accept, qs_lower, seed, max_attempts")
    sp.add_argument("--accept", type=float)
    sp.add_argument("--qs-lower", type=float)
    sp.add_argument("--max-attempts", type=int)

    sp = add("select-demo", "repeated noisy selection versus the exponential mechanism", cmd_select_demo)
    sp.add_argument("--utilities", required=True, help="comma-separated utility vector")
    sp.add_argument("--epsilon", type=float, required=True)
    sp.add_argument("--dist", default="logarithmic:gamma=1e-9")
    sp.add_argument("--mechanism", choices=("repeated", "exponential"), default="repeated")
    sp.add_argument("--jobs", type=int, default=1)

    sp = add("figures", "emit analytic figure data as CSV (one file per series)", cmd_figures)
    sp.add_argument("figure", choices=FIGURES)
    sp.add_argument("--base", default=DEFAULT_BASE, help=f"base guarantee (default {DEFAULT_BASE})")
    sp.add_argument("--families", help="semicolon-separated: logarithmic;geometric;poisson;point;tnb:ETA")
    sp.add_argument("--means", help="comma-separated expected repetition counts")
    sp.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    sp.add_argument("--lambda-grid")
    sp.add_argument("--p", default="0.01", help="comma-separated per-run success probabilities")
    sp.add_argument("--a", type=float, default=0.01, help="conditional_bounds: mass of the third outcome")
    sp.add_argument("--rate-coef", type=float, default=0.1, help="conditional_bounds: divergence = coef * lambda")

    sp = add("verify", "exact oracle versus library bounds; exit 1 on any violation", cmd_verify)
    sp.add_argument("--corpus", choices=("full", "sandwich", "rr", "triple", "random"), default="full")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.format is None:
        args.format = "csv" if args.command == "verify" else "json"
    try:
        return args.func(args)
    except DptuneError as exc:
        kind = type(exc).__name__
        sys.stderr.write(f"error: {kind}: {' '.join(str(exc).split())}\n")
        return 2
    except (OverflowError, ZeroDivisionError, FloatingPointError) as exc:
        sys.stderr.write(f"error: numeric: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
