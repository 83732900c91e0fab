import csv
import io
import json
import math
import os
import subprocess
import sys

import pytest

from conftest import DEMO, GOLDEN
from dptune import accountant, cli, kdist, utility
from dptune.accountant import ZCdp


def close(a, b, rel=1e-12):
    """Structural equality with floats compared to a relative tolerance."""
    if isinstance(a, dict):
        return isinstance(b, dict) and a.keys() == b.keys() and all(close(a[k], b[k], rel) for k in a)
    if isinstance(a, list):
        return isinstance(b, list) and len(a) == len(b) and all(close(x, y, rel) for x, y in zip(a, b))
    if isinstance(a, float) and isinstance(b, (int, float)):
        return a == b or math.isclose(a, b, rel_tol=rel, abs_tol=1e-300)
    return a == b


def csv_cells(text):
    out = []
    for row in csv.reader(io.StringIO(text)):
        cells = []
        for c in row:
            try:
                cells.append(float(c))
            except ValueError:
                cells.append(c)
        out.append(cells)
    return out


def test_account_recovers_pure_dp_multipliers(run_cli):
    code, out, _ = run_cli("account", "--base", "pure:1", "--dist", "tnb:eta=1,gamma=0.5")
    assert code == 0
    doc = json.loads(out)
    assert doc["points"][-1]["lambda"] == "inf"
    assert doc["points"][-1]["epsilon"] == pytest.approx(3.0, abs=1e-6)
    code, out, _ = run_cli("account", "--base", "pure:1", "--dist", "tnb:eta=0,gamma=0.5")
    assert json.loads(out)["points"][-1]["epsilon"] == pytest.approx(2.0, abs=1e-6)


def test_account_csv_matches_golden(run_cli):
    code, out, _ = run_cli("account", "--base", "pure:1", "--dist", "tnb:eta=1,gamma=0.5", "--format", "csv")
    assert code == 0
    with open(os.path.join(GOLDEN, "account_tnb_pure.csv")) as fh:
        assert close(csv_cells(out), csv_cells(fh.read()))


def test_figure_goldens(run_cli):
    for name, argv in (("conditional_bounds.csv", ["figures", "conditional_bounds"]),
                       ("rdp_curves_small.csv", ["figures", "rdp_curves", "--lambda-grid", "2,4,8,16,32,64"])):
        code, out, _ = run_cli(*argv)
        assert code == 0
        with open(os.path.join(GOLDEN, name)) as fh:
            assert close(csv_cells(out), csv_cells(fh.read()), rel=1e-10), name


def test_account_rows_rederive_through_the_api(run_cli):
    code, out, _ = run_cli("account", "--base", "zcdp:0.05", "--dist", "poisson:20", "--lambda-grid", "2,3,8",
                           "--format", "csv")
    tb = accountant.tuning_bound(kdist.Poisson(20.0), ZCdp(0.05), [2, 3, 8])
    rows = list(csv.DictReader(io.StringIO(out)))
    for row, pt in zip(rows, tb.points):
        assert float(row["epsilon_prime"]) == pytest.approx(pt.epsilon, rel=1e-12)
        assert row["rule"] == pt.rule


def test_account_with_conversion_row(run_cli):
    code, out, _ = run_cli("account", "--base", "zcdp:0.1", "--dist", "logarithmic:mean=10", "--delta", "1e-6",
                           "--format", "csv")
    last = out.strip().splitlines()[-1].split(",")
    assert last[0] == "" and last[2] == "approx_dp(delta=1e-06)"


def test_utility_command(run_cli):
    code, out, _ = run_cli("utility", "--dist", "geometric:gamma=0.5", "--tail-ks", "10")
    doc = json.loads(out)
    assert doc["expected_quantile"] == pytest.approx(0.61370563888010938, abs=1e-12)
    assert doc["tail"][0][0] == 10


def test_calibrate_command(run_cli):
    code, out, _ = run_cli("calibrate", "--family", "poisson", "--epsilon", "3", "--base", "zcdp:0.01")
    doc = json.loads(out)
    assert code == 0 and doc["achieved"]["epsilon"] <= 3.0 + 1e-9


def test_usage_errors_exit_2(run_cli):
    code, _, err = run_cli("account", "--base", "pure:1")
    assert code == 2 and err.startswith("error: usage:")
    code, _, err = run_cli("account", "--base", "pure:-1", "--dist", "point:2")
    assert code == 2 and err.startswith("error: ParameterError:")
    code, _, err = run_cli("account", "--base", "zcdp:0.1", "--dist", "banana:3")
    assert code == 2 and "ValidationError" in err
    code, _, err = run_cli("account", "--base", "approx:1,1e-6", "--dist", "point:2", "--lambda-grid", "0.5")
    assert code == 2 and "DomainError" in err


def test_verify_exit_codes(run_cli, monkeypatch):
    code, out, err = run_cli("verify", "--corpus", "sandwich")
    assert code == 0 and err.startswith("ok: ")
    assert out.splitlines()[0] == ",".join(cli.VERIFY_COLUMNS)

    real = cli.verify_rows

    def broken(kind):
        rows = real(kind)
        rows[0] = dict(rows[0], slack=-1e-3)
        return rows

    monkeypatch.setattr(cli, "verify_rows", broken)
    code, _, err = run_cli("verify", "--corpus", "rr")
    assert code == 1 and err.startswith("error: soundness:")


def test_violations_include_lower_envelope():
    rows = [{"slack": 0.0, "exact": 1.0, "lower": 1.1}]
    assert cli.violations(rows) == rows
    assert cli.violations([{"slack": -5e-10, "exact": 1.0}]) == []


def test_figures_write_one_file_per_series(run_cli, tmp_path):
    code, _, _ = run_cli("figures", "rdp_curves", "--means", "2,10", "--lambda-grid", "2,4,8", "--out", str(tmp_path))
    assert code == 0
    names = sorted(os.listdir(tmp_path))
    assert names == sorted(["rdp_curves__base.csv", "rdp_curves__composition_k2.csv",
                            "rdp_curves__composition_k10.csv", "rdp_curves__logarithmic_mean2.csv",
                            "rdp_curves__logarithmic_mean10.csv"])
    with open(tmp_path / "rdp_curves__base.csv") as fh:
        assert fh.readline().strip() == "x,y,series"


def test_beta_figure_is_zero_at_zero_success(run_cli):
    code, out, _ = run_cli("figures", "beta_vs_eps", "--p", "0", "--means", "2,10", "--families", "logarithmic")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert rows and all(float(r["y"]) == 0.0 for r in rows)


def test_quantile_figure_rederives(run_cli):
    code, out, _ = run_cli("figures", "quantile_vs_eps", "--means", "5", "--families", "geometric")
    rows = [r for r in csv.DictReader(io.StringIO(out)) if r["series"] == "geometric_quantile"]
    d = kdist.tnb_with_mean(1.0, 5.0)
    assert float(rows[0]["y"]) == pytest.approx(utility.expected_quantile(d), rel=1e-12)
    eps = accountant.tuning_bound(d, ZCdp(0.1), delta=1e-6).approx_dp[0]
    assert float(rows[0]["x"]) == pytest.approx(eps, rel=1e-12)


def test_conditional_figure_orders_its_series(run_cli):
    code, out, _ = run_cli("figures", "conditional_bounds", "--lambda-grid", "2,8")
    rows = list(csv.DictReader(io.StringIO(out)))
    upper = [float(r["y"]) for r in rows if r["series"] == "upper_bound"]
    exact = [float(r["y"]) for r in rows if r["series"] == "exact_lower"]
    assert len(upper) == 2 and all(u >= e for u, e in zip(upper, exact))


def test_tune_demo_matches_saved_report(run_cli):
    code, out, _ = run_cli("tune", os.path.join(DEMO, "toy_quadratic.json"))
    assert code == 0
    with open(os.path.join(DEMO, "toy_quadratic.seed7.report.json")) as fh:
        saved = json.load(fh)
    doc = json.loads(out)
    assert doc["trials"] == saved["trials"] and doc["best"] == saved["best"]
    assert close(doc, saved)


def test_tune_replay_is_byte_identical_across_workers(run_cli):
    cfg = os.path.join(DEMO, "toy_quadratic.json")
    _, one, _ = run_cli("tune", cfg, "--workers", "1")
    _, four, _ = run_cli("tune", cfg, "--workers", "4")
    assert one == four


def test_until_success_demo(run_cli):
    code, out, _ = run_cli("until-success", os.path.join(DEMO, "until_success.json"))
    doc = json.loads(out)
    assert code == 0 and doc["succeeded"] is True
    assert doc["best"]["score"] >= 0.95
    assert doc["k_drawn"] == len(doc["trials"])


def test_select_demo_command(run_cli):
    code, out, _ = run_cli("select-demo", "--utilities", "0,0,0,10", "--epsilon", "1", "--jobs", "50",
                           "--dist", "geometric:gamma=0.1")
    doc = json.loads(out)
    assert doc["jobs"] == 50 and doc["privacy"]["epsilon"] == pytest.approx(3.0)


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "dptune", "account", "--base", "pure:0.5", "--dist", "point:3",
                          "--lambda-grid", "2", "--format", "csv"], capture_output=True, text=True, check=True)
    assert out.stdout.splitlines()[1].startswith("2.0,1.5,composition")
