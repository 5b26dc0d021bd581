"""Acceptance criteria, each run from its shipped config at the stated tolerances.

Every test prints one ``criterion N: PASS|FAIL`` line; the lines are also
repeated in the terminal summary.  Run alone with

    pytest tests/test_acceptance.py -v
"""
import json
import math
from pathlib import Path

import pytest

from fklab import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
LINES = []


def _run(name, out, **kw):
    raw = cli.load_config(CONFIGS / f"{name}.toml")
    code, res = cli.run_config(raw, out, **kw)
    return code, res


def _report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def test_criterion_01_exit_time(runs):
    code, res = _run("c01_exit_time", runs / "c01")
    row = dict(zip(res.columns, res.rows[0]))
    ok = code == 0 and abs(row["mean"] - 0.25) <= max(3 * row["std_error"], 0.005) and row["n_paths"] == 100_000
    assert _report(1, ok, f"mean {row['mean']:.5f} ± {row['std_error']:.1e}, dt {row['dt']}")


def test_criterion_02_semigroup(runs):
    code, res = _run("c02_semigroup", runs / "c02")
    rows = [dict(zip(res.columns, r)) for r in res.rows]
    ok = code == 0 and [r["t"] for r in rows] == [0.1, 0.2, 0.4]
    for r in rows:
        target = math.exp(-math.pi ** 2 * r["t"] / 2)
        ok &= abs(r["mean"] - target) <= 3 * r["std_error"] + 0.02 * target
    assert _report(2, ok, ", ".join(f"t={r['t']}: {r['mean']:.4f}" for r in rows))


def test_criterion_03_green_point(runs):
    code, res = _run("c03_green_point", runs / "c03")
    errs = res.report["sup_error"]
    num = json.loads((runs / "c03" / "manifest.json").read_text())["numerics_resolved"]
    eps = sorted(errs, key=float, reverse=True)
    ok = (code == 0 and float(eps[-1]) == 0.02 and errs[eps[-1]] <= 0.02 and errs[eps[-1]] < errs[eps[0]]
          and num["n_paths"] == 100_000 and num["grid_points"] == 21)
    assert _report(3, ok, ", ".join(f"eps={e}: sup err {errs[e]:.4f}" for e in eps))


def test_criterion_04_large_time_bound(runs):
    code, res = _run("c04_semilinear_bound", runs / "c04")
    rep = res.report
    ok = code == 0 and rep["all_pass"] and rep["t_grid"] == [0.25, 0.5, 1.0, 2.0]
    assert _report(4, ok, f"min margin {rep['margins']['min']:.4f}")


def test_criterion_05_killing_factor(runs):
    code, res = _run("c05_killing_factor", runs / "c05")
    rep = res.report
    ok = code == 0 and rep["factorization_exact"] and rep["lam"] == 1.0 and rep["slope"] <= -1.0
    assert _report(5, ok, f"bit-exact {rep['factorization_exact']}, slope {rep['slope']:.3f}")


def test_criterion_06_transform(runs):
    code, res = _run("c06_transform", runs / "c06")
    rep = res.report
    ok = code == 0 and rep["sup_diff"] <= 0.02 and len(res.rows) == 41
    assert _report(6, ok, f"sup |u - u_fd| {rep['sup_diff']:.4f}")


def test_criterion_07_stable_rate(runs):
    code, res = _run("c07_stable_rate", runs / "c07")
    rep = res.report
    ok = code == 0 and rep["model"] == "power" and rep["slope"] <= -0.85
    assert _report(7, ok, f"log-log slope {rep['slope']:.3f}, oracle cross-check {rep['psi_oracle_pass']}")


def test_criterion_08_truncation(runs):
    code, res = _run("c08_truncation", runs / "c08")
    rep = res.report
    ok = code == 0 and rep["rhs_oracle_pass"] and rep["n"] == 0.5 and rep["m"] == 2.0
    assert _report(8, ok, f"rhs vs oracle sup-relative {rep['rhs_oracle_rel_sup_deviation']:.3f}")


def test_criterion_09_apriori(runs):
    code, res = _run("c09_apriori", runs / "c09")
    rows = [dict(zip(res.columns, r)) for r in res.rows]
    margin = min(r["rhs"] + 3 * r["combined_se"] - r["lhs"] for r in rows)
    ok = code == 0 and res.passed and margin >= 0
    assert _report(9, ok, f"{len(rows)} grid points, min margin {margin:.4f}")


def test_criterion_10_revuz_and_shift_law(runs):
    ca, ra = _run("c10a_revuz", runs / "c10a")
    cb, rb = _run("c10b_shift_law", runs / "c10b")
    cc, rc = _run("c10c_revuz_killed", runs / "c10c")

    def at100(res):
        rows = [dict(zip(res.columns, r)) for r in res.rows]
        return [r for r in rows if r["alpha"] == 100.0][0]

    a, c = at100(ra), at100(rc)
    ks = dict(zip(rb.columns, rb.rows[0]))
    ok = (ca == 0 and cb == 0 and cc == 0 and abs(a["estimate"] - a["mass"]) <= 0.05 * a["mass"]
          and ks["n_paths"] == 10_000 and (ks["s"], ks["t"]) == (1.0, 0.5)
          and ks["ks_statistic"] < ks["critical_value_1pct"])
    assert _report(10, ok, f"alpha=100 reflected {a['estimate']:.4f}, killed {c['estimate']:.4f} vs "
                           f"{c['target']:.4f}; KS {ks['ks_statistic']:.4f} < {ks['critical_value_1pct']:.4f}")


@pytest.mark.parametrize("name", ["c02_semigroup", "c08_truncation"])
def test_criterion_11_reproducible(runs, name):
    first, second = runs / f"{name}-r1", runs / f"{name}-r2"
    _run(name, first)
    _run(name, second, workers=2)
    same = (first / "results.csv").read_bytes() == (second / "results.csv").read_bytes()
    assert _report(11, same, f"{name} rerun (workers 1 vs 2) byte-identical: {same}")
