import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fklab import cli


def small(builtin, **numerics):
    return {"builtin": builtin, "seed": 3, "numerics": numerics}


def test_empty_config_exit_2(capsys):
    code, res = cli.run_config({})
    assert code == 2 and res is None
    assert "config error" in capsys.readouterr().err


@pytest.mark.parametrize("raw", [
    {"experiment": "exit-time", "bogus": 1},
    {"builtin": "interval-half", "numerics": {"n_paths": "many"}},
    {"builtin": "interval-half", "numerics": {"n_path": 10}},
    {"builtin": "interval-half", "problem": {"process": {"type": "killed-bm", "speed": 2}}},
    {"builtin": "nope"},
    {"experiment": "not-an-experiment", "builtin": "interval-half"},
    {"builtin": "semilinear", "problem": {"coefficients": {"f": "import os"}}},
    {"builtin": "interval-half", "seed": -1},
    {"builtin": "interval-half", "numerics": {"n_paths": True}},
])
def test_schema_errors_exit_2(raw, tmp_path):
    code, _ = cli.run_config(raw, tmp_path)
    assert code == 2
    assert not (tmp_path / "results.csv").exists()


def test_resolve_lists_every_problem():
    with pytest.raises(cli.ConfigError) as info:
        cli.resolve_config({"experiment": "exit-time", "a": 1, "b": 2})
    assert len(info.value.problems) >= 2


@given(key=st.text(min_size=1, max_size=12).filter(lambda k: k not in cli.TOP_KEYS))
@settings(max_examples=25, deadline=None)
def test_unknown_top_level_keys_rejected(key):
    with pytest.raises(cli.ConfigError):
        cli.resolve_config({"builtin": "interval-half", key: 1})


def test_exit_time_run(tmp_path):
    code, res = cli.run_config(small("interval-half", n_paths=20_000, dt=1e-3), tmp_path)
    assert code == 0
    with open(tmp_path / "results.csv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert abs(float(rows[0]["mean"]) - 0.25) < 0.01
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["csv_schema"]["version"] == cli.CSV_VERSION
    assert man["csv_schema"]["columns"] == res.columns
    assert man["config"]["builtin"] == "interval-half"
    assert "version" in man


def test_linear_heat_verify_convergence(tmp_path):
    raw = small("linear-heat", n_paths=1000, t=[0.25, 0.5], grid_points=5, delta=0.25)
    code, _ = cli.run_config(raw, tmp_path)
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["all_pass"] is True


def test_failing_assertion_exit_1(tmp_path, capsys):
    # a horizon far below the mean exit time truncates every path at 0.05, against an oracle of 0.25
    raw = small("interval-half", n_paths=1000, horizon=0.05)
    with pytest.warns(UserWarning):
        code, res = cli.run_config(raw, tmp_path)
    assert code == 1 and not res.passed
    assert "assertion failed" in capsys.readouterr().err
    assert (tmp_path / "results.csv").exists()


def test_rerun_bit_identical_and_workers(tmp_path):
    raw = small("truncation", n_paths=1024, grid_points=5, n=0.2, m=0.4, dt=2e-3)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    cli.run_config(raw, a)
    cli.run_config(raw, b)
    cli.run_config(raw, c, workers=2)
    ra = (a / "results.csv").read_bytes()
    assert ra == (b / "results.csv").read_bytes() == (c / "results.csv").read_bytes()


def test_seed_override_changes_results(tmp_path):
    raw = small("interval-half", n_paths=2000)
    cli.run_config(raw, tmp_path / "a")
    cli.run_config(raw, tmp_path / "b", seed=99)
    assert (tmp_path / "a" / "results.csv").read_bytes() != (tmp_path / "b" / "results.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 99


def test_main_flags(tmp_path, capsys):
    assert cli.main(["--list-experiments"]) == 0
    out = capsys.readouterr().out
    for name in cli.EXPERIMENTS:
        assert name in out
    assert cli.main([]) == 2
    cfg = tmp_path / "c.toml"
    cfg.write_text('builtin = "interval-half"\nseed = 1\n[numerics]\nn_paths = 2000\n')
    assert cli.main(["--config", str(cfg), "--out", str(tmp_path / "o"), "--workers", "2"]) == 0
    assert (tmp_path / "o" / "manifest.json").exists()
    bad = tmp_path / "bad.toml"
    bad.write_text("this is = = not toml")
    assert cli.main(["--config", str(bad)]) == 2


def test_every_builtin_resolves():
    for name in cli.BUILTINS:
        cfg = cli.resolve_config({"builtin": name})
        cli.build_problem(cfg["problem"])


def test_shipped_configs_resolve():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.toml"))
    assert len(files) >= 10
    for f in files:
        cli.resolve_config(cli.load_config(f))


def test_csv_is_plain(tmp_path):
    cli.run_config(small("interval-half", n_paths=1500), tmp_path)
    text = (tmp_path / "results.csv").read_bytes().decode("utf-8")
    assert "\r" not in text
    header = text.splitlines()[0]
    assert header.split(",")[0] and "," in header
