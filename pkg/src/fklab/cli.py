"""Config-driven experiment runner.

    fklab --config configs/c01_exit_time.toml --out runs/c01
    fklab --list-experiments

A config is a TOML file with ``experiment``, an optional ``builtin`` problem
name, a ``[problem]`` block (domain, process, coefficients, measure) and a
``[numerics]`` block.  Built-in problems supply both blocks; keys given in
the file override them.  Every run writes ``manifest.json`` (resolved config
and CSV schema), ``results.csv`` and, where the experiment produces one,
``report.json``.  Exit codes: 0 all assertions passed, 1 an assertion
failed, 2 the config is invalid.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .asymptotics import bound_values, fit_decay, source_potential, verify_convergence
from .domains import Ball, Interval
from .expr import Expression, ExprError
from .feynman_kac import potential_grid, semigroup_apply, spectral_oracle_interval
from .grid import GridFunction
from .measures import (LEBESGUE, ZERO, LebesgueDensity, MollifiedPoint, SurfaceMeasure, revuz_check,
                       total_mass)
from .nonlinear import (Coefficients, MCParams, ProblemSpec, apriori_check, solve_elliptic, solve_parabolic,
                        truncation_gap)
from .process import (KilledBrownian, KilledStable, ReflectedBrownian, estimate_mean_exit_time,
                      ks_critical_value, shift_law_check)
from .reference import fd_elliptic, fd_parabolic, FDGrid, fractional_elliptic, stable_exit_time_ball
from .transforms import build_transform, push_solution

log = logging.getLogger("fklab")

CSV_VERSION = "1"


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# ---------------------------------------------------------------------------
# schema

@dataclass
class Numerics:
    n_paths: int = 10_000
    dt: float = 1e-3
    horizon: float = 5.0
    grid_points: int = 21
    delta: float = 0.05
    sweeps: int = 2
    tol: float = 1e-3
    j_max: int = 50
    x0: float = 0.5
    t: list | None = None
    T: float | None = None
    alpha: float = 0.0
    alphas: list | None = None
    s: float = 1.0
    n: float = 0.5
    m: float = 2.0
    eps_list: list | None = None
    fd_cells: int = 400
    quad_tol: float = 1e-8
    s_max: float | None = None
    model: str = "exponential"
    max_slope: float | None = None
    abs_tol: float = 0.005
    rel_budget: float = 0.02
    rel_tol: float = 0.05
    rhs_paths: int | None = None
    oracle: bool = True
    tail: float = 30.0

    def mc(self, workers=1) -> MCParams:
        return MCParams(self.n_paths, self.dt, self.horizon, self.delta, self.sweeps, self.tol, self.j_max, workers)

    def grid(self, problem):
        a, b = problem.domain.lows[0], problem.domain.highs[0]
        return np.linspace(a, b, self.grid_points)


NUM_TYPES = {
    "n_paths": int, "grid_points": int, "sweeps": int, "j_max": int, "fd_cells": int,
    "model": str, "oracle": bool, "rhs_paths": int, "t": list, "alphas": list, "eps_list": list,
}

TOP_KEYS = {"experiment", "builtin", "seed", "output", "problem", "numerics"}
PROBLEM_KEYS = {"domain", "process", "coefficients", "measure", "h"}
DOMAIN_KEYS = {"type", "a", "b", "center", "radius"}
PROCESS_KEYS = {"type", "alpha", "killing_rate"}
COEFF_KEYS = {"f", "g", "phi", "alpha_mono"}
MEASURE_KEYS = {"type", "beta", "weight", "x0", "eps", "mass"}

EXPERIMENTS = {
    "exit-time": "mean lifetime at x0 against the closed form",
    "semigroup": "P_t phi(x0) for each t against the eigen-expansion",
    "potential": "potential of the measure on the grid against a deterministic oracle",
    "revuz": "alpha E_m int exp(-alpha t) dA against the total mass",
    "shift-law": "two-sample KS test of A_t started at times 0 and s",
    "solve-parabolic": "nonlinear parabolic solve against Crank-Nicolson",
    "solve-elliptic": "nonlinear elliptic solve against finite differences (and the point Green function)",
    "truncation-gap": "finite-horizon truncation gap against its tail bound",
    "apriori": "a priori bound along the solved parabolic solution",
    "transform-check": "quadratic-gradient problem through the Phi transform against a direct FD solve",
    "verify-convergence": "gap |u(t) - v| against the large-time bound at every (t, x)",
    "fit-decay": "decay rate of the bound sequence (with the killing factorization check)",
    "oracle-compare": "Monte Carlo potential of the source term against the deterministic oracle",
}


def _builtin(problem, experiment, **numerics):
    return {"problem": problem, "experiment": experiment, "numerics": numerics}


UNIT = {"type": "interval", "a": 0.0, "b": 1.0}
SYM = {"type": "interval", "a": -1.0, "b": 1.0}
KBM = {"type": "killed-bm"}
HEAT = {"domain": UNIT, "process": KBM, "coefficients": {"phi": "sin(pi*x)"}}
SEMILINEAR = {
    "domain": UNIT, "process": KBM,
    "coefficients": {"f": "-y^3 + 1", "g": "1/(1 + max(y, 0))", "phi": "sin(pi*x)"},
    "measure": {"type": "mollified-point", "x0": 0.5, "eps": 0.05},
}

BUILTINS = {
    "interval-half": _builtin({"domain": UNIT, "process": KBM}, "exit-time", x0=0.5, n_paths=100_000, dt=1e-4),
    "linear-heat": _builtin(HEAT, "verify-convergence", t=[0.25, 0.5, 1.0, 2.0], grid_points=11),
    "linear-heat-killed": _builtin({**HEAT, "process": {"type": "killed-bm", "killing_rate": 1.0}}, "fit-decay",
                                   t=[0.1, 0.2, 0.4, 0.8], grid_points=11, max_slope=-1.0),
    "green-point": _builtin({"domain": UNIT, "process": KBM, "coefficients": {"g": "1"},
                             "measure": {"type": "mollified-point", "x0": 0.5, "eps": 0.05}},
                            "solve-elliptic", grid_points=21, abs_tol=0.02),
    "semilinear": _builtin(SEMILINEAR, "verify-convergence", t=[0.25, 0.5, 1.0, 2.0], grid_points=21),
    "quadratic-gradient": _builtin({"domain": UNIT, "process": KBM, "coefficients": {"g": "1"},
                                    "measure": {"type": "lebesgue"}, "h": "y"},
                                   "transform-check", T=0.5, grid_points=41, abs_tol=0.02),
    "stable-bound": _builtin({"domain": SYM, "process": {"type": "killed-stable", "alpha": 1.0},
                              "coefficients": {"f": "1", "phi": "1"}},
                             "fit-decay", t=[0.5, 1.0, 2.0, 4.0], model="power", max_slope=-0.85),
    "truncation": _builtin({"domain": UNIT, "process": KBM, "coefficients": {"f": "-y + 1", "alpha_mono": -1.0}},
                           "truncation-gap", n=0.5, m=2.0, grid_points=11, rel_tol=0.02),
    "revuz-lebesgue": _builtin({"domain": UNIT, "process": {"type": "reflected-bm"},
                                "measure": {"type": "lebesgue"}}, "revuz", alphas=[10.0, 100.0]),
    "revuz-lebesgue-killed": _builtin({"domain": UNIT, "process": KBM, "measure": {"type": "lebesgue"}},
                                      "revuz", alphas=[1.0, 10.0, 100.0]),
    "neumann-flux": _builtin({"domain": UNIT, "process": {"type": "reflected-bm", "killing_rate": 1.0},
                              "coefficients": {"g": "1"}, "measure": {"type": "surface"}},
                             "solve-parabolic", T=0.5, grid_points=11, abs_tol=0.02),
    "stable-exit": _builtin({"domain": SYM, "process": {"type": "killed-stable", "alpha": 1.0},
                             "coefficients": {"f": "1"}}, "oracle-compare", grid_points=11, abs_tol=0.03),
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _unknown(d, allowed, where, problems):
    if not isinstance(d, dict):
        problems.append(f"{where}: expected a table")
        return False
    for k in d:
        if k not in allowed:
            problems.append(f"{where}: unknown key {k!r}")
    return True


def resolve_config(raw: dict) -> dict:
    """Validate ``raw`` and merge the built-in problem; raises ConfigError listing every problem."""
    problems = []
    if not isinstance(raw, dict) or not raw:
        raise ConfigError(["config is empty: need at least 'experiment' or 'builtin'"])
    _unknown(raw, TOP_KEYS, "config", problems)
    cfg = {}
    if "builtin" in raw:
        name = raw["builtin"]
        if name not in BUILTINS:
            problems.append(f"builtin: unknown problem {name!r} (see --list-experiments)")
        else:
            cfg = copy.deepcopy(BUILTINS[name])
            cfg["builtin"] = name
    cfg = _merge(cfg, {k: v for k, v in raw.items() if k in TOP_KEYS and k != "builtin"})
    exp = cfg.get("experiment")
    if exp is None:
        problems.append("experiment: missing")
    elif exp not in EXPERIMENTS:
        problems.append(f"experiment: unknown value {exp!r}")
    seed = cfg.setdefault("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        problems.append("seed: must be a nonnegative integer")
    if "output" in cfg and not isinstance(cfg["output"], str):
        problems.append("output: must be a string path")
    prob = cfg.setdefault("problem", {})
    if _unknown(prob, PROBLEM_KEYS, "problem", problems):
        if "domain" not in prob:
            problems.append("problem.domain: missing")
        for key, allowed in (("domain", DOMAIN_KEYS), ("process", PROCESS_KEYS), ("coefficients", COEFF_KEYS),
                             ("measure", MEASURE_KEYS)):
            if key in prob:
                _unknown(prob[key], allowed, f"problem.{key}", problems)
        if "process" not in prob:
            problems.append("problem.process: missing")
    num = cfg.setdefault("numerics", {})
    names = {f.name: f for f in fields(Numerics)}
    if _unknown(num, set(names), "numerics", problems):
        for k, v in num.items():
            if k not in names:
                continue
            want = NUM_TYPES.get(k, float)
            if want is float and k in ("x0", "T", "s_max", "max_slope") and v is None:
                continue
            if want is float:
                ok = isinstance(v, (int, float)) and not isinstance(v, bool)
            elif want is int:
                ok = isinstance(v, int) and not isinstance(v, bool)
            else:
                ok = isinstance(v, want)
            if want is list and ok:
                ok = all(isinstance(e, (int, float)) and not isinstance(e, bool) for e in v)
            if not ok:
                problems.append(f"numerics.{k}: expected {want.__name__}, got {type(v).__name__}")
    if not problems:
        try:
            build_problem(cfg["problem"])
            Numerics(**cfg["numerics"])
        except (ConfigError, ExprError, ValueError, TypeError) as exc:
            problems.append(f"problem: {exc}")
    if problems:
        raise ConfigError(problems)
    return cfg


def _expr(v, where):
    if v is None:
        return None
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        c = float(v)
        return lambda x, y=None: np.full(np.shape(x), c)
    if isinstance(v, str):
        try:
            return Expression(v)
        except ExprError as exc:
            raise ConfigError([f"{where}: {exc}"]) from None
    raise ConfigError([f"{where}: expected a number or an expression string"])


def build_problem(p: dict) -> ProblemSpec:
    d = p["domain"]
    kind = d.get("type", "interval")
    if kind == "interval":
        domain = Interval(float(d.get("a", 0.0)), float(d.get("b", 1.0)))
    elif kind == "ball":
        domain = Ball(tuple(d.get("center", (0.0, 0.0))), float(d.get("radius", 1.0)))
    else:
        raise ConfigError([f"problem.domain.type: unknown value {kind!r}"])
    pr = p["process"]
    lam = float(pr.get("killing_rate", 0.0))
    ptype = pr.get("type")
    if ptype == "killed-bm":
        proc = KilledBrownian(domain, lam)
    elif ptype == "reflected-bm":
        proc = ReflectedBrownian(domain, lam)
    elif ptype == "killed-stable":
        proc = KilledStable(domain, float(pr.get("alpha", 1.0)), lam)
    else:
        raise ConfigError([f"problem.process.type: unknown value {ptype!r}"])
    c = p.get("coefficients", {})
    co = Coefficients(_expr(c.get("f"), "coefficients.f"), _expr(c.get("g"), "coefficients.g"),
                      _expr(c.get("phi"), "coefficients.phi"), float(c.get("alpha_mono", 0.0)), lam)
    m = p.get("measure", {"type": "zero"})
    mt = m.get("type", "zero")
    if mt == "zero":
        measure = ZERO
    elif mt == "lebesgue":
        measure = LEBESGUE
    elif mt == "density":
        measure = LebesgueDensity(_expr(m.get("beta", 1.0), "measure.beta"))
    elif mt == "surface":
        measure = SurfaceMeasure(_expr(m["weight"], "measure.weight") if "weight" in m else None)
    elif mt == "mollified-point":
        measure = MollifiedPoint(m.get("x0", 0.5), float(m.get("mass", 1.0)), float(m.get("eps", 0.05)))
    else:
        raise ConfigError([f"problem.measure.type: unknown value {mt!r}"])
    if "h" in p:
        _expr(p["h"], "problem.h")
    return ProblemSpec(domain, proc, co, measure)


# ---------------------------------------------------------------------------
# experiments

@dataclass
class Result:
    columns: list
    rows: list
    passed: bool
    failures: list
    report: dict | None = None


def _interval_bm(problem):
    return (isinstance(problem.process, KilledBrownian) and isinstance(problem.domain, Interval))


def _interval_any(problem):
    return isinstance(problem.domain, Interval)


def exp_exit_time(problem, num, seed, workers):
    x0 = num.x0
    est = estimate_mean_exit_time(problem.process, [x0] if np.ndim(x0) == 0 else x0, num.n_paths, num.dt,
                                  num.horizon, seed)
    oracle = math.nan
    if num.oracle:
        if _interval_bm(problem):
            oracle = spectral_oracle_interval("mean_exit", problem.domain, x0)
        elif isinstance(problem.process, KilledBrownian) and isinstance(problem.domain, Ball):
            r2 = float(np.sum((np.asarray(x0) - np.asarray(problem.domain.center)) ** 2))
            oracle = (problem.domain.radius ** 2 - r2) / len(problem.domain.center)
        elif isinstance(problem.process, KilledStable) and _interval_any(problem):
            a, b = problem.domain.lows[0], problem.domain.highs[0]
            oracle = float(stable_exit_time_ball(problem.process.alpha, x0 - 0.5 * (a + b), 0.5 * (b - a)))
    tol = max(3 * est.std_error, num.abs_tol)
    ok = math.isnan(oracle) or abs(est.mean - oracle) <= tol
    row = [x0, est.mean, est.std_error, est.n_paths, num.dt, oracle, tol, ok]
    return Result(["x0", "mean", "std_error", "n_paths", "dt", "oracle", "tolerance", "pass"], [row], ok,
                  [] if ok else [row])


def exp_semigroup(problem, num, seed, workers):
    ts = num.t or [0.1, 0.2, 0.4]
    phi = problem.coefficients.phi
    ests = semigroup_apply(problem.process, phi, ts, num.x0, num.n_paths, num.dt, seed, workers=workers)
    rows, fails = [], []
    for t, e in zip(ts, ests):
        oracle = math.nan
        if num.oracle and _interval_bm(problem):
            oracle = math.exp(-problem.coefficients.lam * t) * spectral_oracle_interval(
                "semigroup", problem.domain, num.x0, phi=phi, t=t)
        tol = 3 * e.std_error + num.rel_budget * abs(oracle) if not math.isnan(oracle) else math.nan
        ok = math.isnan(oracle) or abs(e.mean - oracle) <= tol
        row = [t, num.x0, e.mean, e.std_error, oracle, tol, ok]
        rows.append(row)
        if not ok:
            fails.append(row)
    return Result(["t", "x0", "mean", "std_error", "oracle", "tolerance", "pass"], rows, not fails, fails)


def _potential_oracle(problem, grid, alpha, fn=None):
    """Deterministic potential of ``fn`` dx (or of the measure) when an oracle exists."""
    m = problem.measure
    if isinstance(problem.process, KilledStable) and alpha == 0 and problem.coefficients.lam == 0:
        rhs = fn if fn is not None else (lambda x: m.density(x[:, None]) if hasattr(m, "density") else None)
        sol = fractional_elliptic(problem.process.alpha, problem.domain, rhs, 800)
        return sol(grid)
    if _interval_bm(problem):
        theta = alpha + problem.coefficients.lam
        if fn is not None:
            beta = fn
        elif isinstance(m, LebesgueDensity):
            beta = 1.0 if m.beta is None else (lambda x: m.density(np.atleast_1d(x)[:, None]))
        elif isinstance(m, MollifiedPoint):
            beta = lambda x: m.density(np.atleast_1d(x)[:, None])  # noqa: E731
        else:
            return None
        return np.array([spectral_oracle_interval("potential", problem.domain, x, beta=beta, alpha=theta)
                         for x in grid])
    return None


def exp_potential(problem, num, seed, workers):
    grid = num.grid(problem)
    gf = potential_grid(problem.process, problem.measure, None, num.alpha, grid, num.n_paths, num.dt,
                        num.horizon, seed, outside=problem.outside, workers=workers)
    oracle = _potential_oracle(problem, grid, num.alpha) if num.oracle else None
    return _compare_rows(grid, gf, oracle, num)


def _compare_rows(grid, gf, oracle, num, extra_cols=(), extra=None):
    rows, fails = [], []
    for i, x in enumerate(grid):
        o = math.nan if oracle is None else float(oracle[i])
        tol = 3 * float(gf.std_error[i]) + num.abs_tol
        ok = math.isnan(o) or abs(gf.values[i] - o) <= tol
        row = [float(x), float(gf.values[i]), float(gf.std_error[i]), o, tol, ok]
        if extra is not None:
            row = extra[i] + row
        rows.append(row)
        if not ok:
            fails.append(row)
    return Result(list(extra_cols) + ["x", "value", "std_error", "oracle", "tolerance", "pass"], rows,
                  not fails, fails)


def exp_oracle_compare(problem, num, seed, workers):
    """Source potential ``R(|f(., 0)| + |g(., 0)| mu)`` against the deterministic oracle."""
    grid = num.grid(problem)
    psi = source_potential(problem, grid, num.mc(workers), seed)
    co = problem.coefficients
    oracle = None
    if num.oracle and co.f is not None and (co.g is None or not problem.measure or problem.measure == ZERO):
        oracle = _potential_oracle(problem, grid, 0.0, lambda x: np.abs(co.f_at(np.atleast_1d(x),
                                                                               np.zeros(np.size(x)))))
    return _compare_rows(grid, psi, oracle, num)


def exp_revuz(problem, num, seed, workers):
    alphas = num.alphas or [1.0, 10.0, 100.0]
    rows_ = revuz_check(problem.process, problem.measure, alphas, num.n_paths, seed, num.dt, num.tail)
    rows, fails = [], []
    for r in rows_:
        target = r.mass
        if (_interval_bm(problem) and problem.measure == LEBESGUE and problem.coefficients.lam == 0):
            # killed: alpha R_alpha 1 integrates to vol (1 - 2 tanh(kL/2) / (kL)), k = sqrt(2 alpha)
            L = problem.domain.highs[0] - problem.domain.lows[0]
            k = math.sqrt(2 * r.alpha)
            target = L * (1 - 2 * math.tanh(k * L / 2) / (k * L))
        ok = abs(r.estimate.mean - target) <= num.rel_tol * abs(target)
        row = [r.alpha, r.estimate.mean, r.estimate.std_error, r.mass, target, ok]
        rows.append(row)
        if not ok:
            fails.append(row)
    return Result(["alpha", "estimate", "std_error", "mass", "target", "pass"], rows, not fails, fails)


def exp_shift_law(problem, num, seed, workers):
    t = (num.t or [0.5])[0]
    stat = shift_law_check(problem.process, problem.measure, [num.x0], num.s, t, num.n_paths, seed, num.dt)
    crit = ks_critical_value(num.n_paths, num.n_paths, 0.01)
    ok = stat < crit
    row = [num.s, t, num.n_paths, stat, crit, ok]
    return Result(["s", "t", "n_paths", "ks_statistic", "critical_value_1pct", "pass"], [row], ok,
                  [] if ok else [row])


def _n_time(num, T):
    n = int(round(T / num.delta))
    if n < 1 or abs(n * num.delta - T) > 1e-9:
        raise ConfigError([f"numerics: T = {T} is not a multiple of delta = {num.delta}"])
    return n


def exp_solve_parabolic(problem, num, seed, workers):
    T = num.T or 1.0
    grid = num.grid(problem)
    u = solve_parabolic(problem, T, _n_time(num, T), grid, num.mc(workers), seed)
    fd = None
    if num.oracle and _interval_any(problem) and not isinstance(problem.process, KilledStable):
        fd = fd_parabolic(problem, T, FDGrid(num.fd_cells), times=list(u.times))
    rows, fails = [], []
    for j, t in enumerate(u.times):
        ref = fd.slice(j) if fd is not None else None
        for i, x in enumerate(grid):
            o = float(ref(np.array([x]))[0]) if ref is not None else math.nan
            tol = 3 * float(u.std_error[j, i]) + num.abs_tol
            ok = math.isnan(o) or abs(u.values[j, i] - o) <= tol
            row = [float(t), float(x), float(u.values[j, i]), float(u.std_error[j, i]), o, tol, ok]
            rows.append(row)
            if not ok:
                fails.append(row)
    return Result(["t", "x", "value", "std_error", "fd", "tolerance", "pass"], rows, not fails, fails,
                  {"sweep_changes": u.meta["sweep_changes"]})


def exp_solve_elliptic(problem, num, seed, workers):
    grid = num.grid(problem)
    m = problem.measure
    if num.eps_list and isinstance(m, MollifiedPoint):
        return _green_sweep(problem, num, seed, workers, grid)
    v = solve_elliptic(problem, num.horizon, grid, num.mc(workers), seed)
    fd = None
    if num.oracle and _interval_any(problem) and not isinstance(problem.process, KilledStable):
        fd = fd_elliptic(problem, FDGrid(num.fd_cells))(grid)
    res = _compare_rows(grid, v, fd, num)
    res.report = {"trace": v.meta["trace"]}
    return res


def _green_sweep(problem, num, seed, workers, grid):
    """Elliptic solves for each mollifier width against the exact point Green function."""
    m = problem.measure
    exact = fd_elliptic(problem, FDGrid(num.fd_cells), exact_green=True)(grid)
    rows, errs = [], []
    for eps in num.eps_list:
        pr = ProblemSpec(problem.domain, problem.process, problem.coefficients,
                         MollifiedPoint(m.x0, m.mass, float(eps)))
        v = solve_elliptic(pr, num.horizon, grid, num.mc(workers), seed)
        err = np.abs(v.values - exact)
        errs.append(float(err.max()))
        for i, x in enumerate(grid):
            rows.append([float(eps), float(x), float(v.values[i]), float(v.std_error[i]), float(exact[i]),
                         float(err[i])])
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    ok = decreasing and errs[-1] <= num.abs_tol
    fails = [] if ok else [["sup_errors", errs, "decreasing", decreasing]]
    return Result(["eps", "x", "value", "std_error", "point_green", "abs_error"], rows, ok, fails,
                  {"sup_error": dict(zip(map(str, num.eps_list), errs)), "decreasing": decreasing})


def _inequality_rows(rep, extra_cols=(), extra=None):
    rows, fails = [], []
    for i, x in enumerate(rep.x):
        ok = bool(rep.passes[i])
        row = [float(x), float(rep.lhs[i]), float(rep.rhs[i]), float(rep.se[i]), ok]
        if extra is not None:
            row = row[:-1] + extra[i] + [ok]
        rows.append(row)
        if not ok:
            fails.append(row)
    return ["x", "lhs", "rhs", "combined_se"] + list(extra_cols) + ["pass"], rows, fails


def exp_truncation_gap(problem, num, seed, workers):
    grid = num.grid(problem)
    rep = truncation_gap(problem, num.n, num.m, grid, num.mc(workers), seed, num.rhs_paths)
    co = problem.coefficients
    oracle = None
    if (num.oracle and _interval_bm(problem) and co.g is None and co.lam == 0 and co.f is not None):
        c = np.abs(co.f_at(grid, np.zeros(len(grid))))
        phi0 = co.phi is None
        if np.allclose(c, c[0]) and phi0:
            oracle = np.array([c[0] * spectral_oracle_interval("survival_integral", problem.domain, x,
                                                               n=num.n, m=num.m) for x in grid])
    extra = [[math.nan if oracle is None else float(oracle[i])] for i in range(len(grid))]
    cols, rows, fails = _inequality_rows(rep, ["rhs_oracle"], extra)
    report = {"n": num.n, "m": num.m}
    if oracle is not None:
        # relative to the sup of the oracle, with three standard errors of statistical slack
        scale = float(np.max(np.abs(oracle)))
        dev = np.abs(rep.rhs - oracle)
        ok = dev <= num.rel_tol * scale + 3 * rep.meta["rhs_se"]
        report["rhs_oracle_rel_sup_deviation"] = float(dev.max() / scale)
        report["rhs_oracle_pass"] = bool(np.all(ok))
        for i in np.flatnonzero(~ok):
            fails.append(["rhs_oracle", float(grid[i]), float(rep.rhs[i]), float(oracle[i])])
    return Result(cols, rows, not fails, fails, report)


def exp_apriori(problem, num, seed, workers):
    T = num.T or 1.0
    grid = num.grid(problem)
    mc = num.mc(workers)
    u = solve_parabolic(problem, T, _n_time(num, T), grid, mc, seed)
    rep = apriori_check(problem, T, u, grid, mc, seed)
    cols, rows, fails = _inequality_rows(rep)
    return Result(cols, rows, not fails, fails, {"T": T})


def exp_transform_check(problem, num, seed, workers, h_src=None):
    T = num.T or 0.5
    grid = num.grid(problem)
    h_expr = _expr(h_src or "0", "problem.h")

    def h(s):
        return float(h_expr(np.array([s]), np.array([s]))[0])

    co = problem.coefficients
    # pre-pass: sup of |u| from the h = 0 problem bounds the range of w
    s_max = num.s_max or 10.0
    triple = build_transform(h, s_max, num.quad_tol)

    # H rises with w below 0, so the transformed data are only dissipative on w >= 0.
    # Nonnegative data keep w >= 0 (comparison), and there the coefficients are read at w+.
    probe = np.linspace(0.0, 3.0, 7)
    xs = grid
    nonneg = (np.all(co.phi_at(xs) >= 0)
              and all(np.all(co.f_at(xs, np.full(len(xs), y)) >= 0) for y in probe)
              and all(np.all(co.g_at(xs, np.full(len(xs), y)) >= 0) for y in probe))
    pos = (lambda w: np.maximum(w, 0.0)) if nonneg else (lambda w: w)

    def g_w(x, w):
        w = pos(w)
        u_ = np.interp(w, triple.Phi_tab, triple.s)
        return triple.H_array(w) * co.g_at(x, u_)

    def f_w(x, w):
        w = pos(w)
        u_ = np.interp(w, triple.Phi_tab, triple.s)
        return triple.H_array(w) * co.f_at(x, u_)

    def phi_w(x):
        return np.array([triple.Phi(v) for v in co.phi_at(x)])

    cw = Coefficients(f_w if co.f is not None else None, g_w if co.g is not None else None,
                      phi_w if co.phi is not None else None, 0.0, co.lam)
    pw = ProblemSpec(problem.domain, problem.process, cw, problem.measure)
    w = solve_parabolic(pw, T, _n_time(num, T), grid, num.mc(workers), seed)
    wT = w.slice(len(w.times) - 1)
    u = push_solution(wT, triple)

    def gradient(x, uu, ux):
        return -np.array([h(v) for v in uu]) * ux ** 2

    fd = fd_parabolic(problem, T, FDGrid(num.fd_cells), gradient=gradient)(grid)
    rows, fails = [], []
    diff = np.abs(u.values - fd)
    for i, x in enumerate(grid):
        ok = bool(diff[i] <= num.abs_tol)
        row = [float(x), float(wT.values[i]), float(u.values[i]), float(u.std_error[i]), float(fd[i]),
               float(diff[i]), ok]
        rows.append(row)
        if not ok:
            fails.append(row)
    return Result(["x", "w", "u", "std_error", "u_fd", "abs_diff", "pass"], rows, not fails, fails,
                  {"sup_diff": float(diff.max()), "T": T, "phi_range": list(triple.phi_range),
                   "positive_part": bool(nonneg)})


def exp_verify_convergence(problem, num, seed, workers):
    ts = num.t or [0.25, 0.5, 1.0, 2.0]
    rep = verify_convergence(problem, ts, num.grid(problem), num.mc(workers), seed)
    fails = [list(r) for r in rep.rows() if not r[-1]]
    report = rep.to_dict()
    if problem.coefficients.lam > 0:
        exact = bool(np.all(rep.rhs == rep.inner * np.exp(-problem.coefficients.lam * rep.t_grid)[:, None]))
        report["factorization_exact"] = exact
        if not exact:
            fails.append(["factorization", False])
    return Result(["t", "x", "u", "v", "gap", "rhs", "slack", "pass"], [list(r) for r in rep.rows()],
                  not fails, fails, report)


def exp_fit_decay(problem, num, seed, workers):
    ts = num.t or [0.25, 0.5, 1.0, 2.0]
    grid = num.grid(problem)
    mc = num.mc(workers)
    psi = source_potential(problem, grid, mc, seed)
    b = bound_values(problem, ts, grid, mc, seed, psi)
    slope, r2 = fit_decay(b, num.model, "rhs")
    fails = []
    if num.max_slope is not None and not slope <= num.max_slope:
        fails.append(["slope", slope, "max_slope", num.max_slope])
    exact = b.factorization_exact
    if b.lam > 0 and not exact:
        fails.append(["factorization", False])
    report = {"model": num.model, "slope": slope, "r2": r2, "max_slope": num.max_slope,
              "factorization_exact": exact, "lam": b.lam, "psi": psi.values.tolist(),
              "psi_std_error": psi.std_error.tolist()}
    if num.oracle and isinstance(problem.process, KilledStable):
        co = problem.coefficients
        fn = lambda x: np.abs(co.f_at(np.atleast_1d(x), np.zeros(np.size(x))))  # noqa: E731
        oracle = _potential_oracle(problem, grid, 0.0, fn)
        if oracle is not None:
            dev = np.abs(psi.values - oracle)
            tol = 3 * psi.std_error + num.abs_tol
            report["psi_oracle"] = oracle.tolist()
            report["psi_oracle_pass"] = bool(np.all(dev <= tol))
            if not report["psi_oracle_pass"]:
                fails.append(["psi_oracle", float(dev.max())])
    # sups over the points the fit uses (zero-lifetime starts never decay)
    keep = np.ones(len(b.x), dtype=bool)
    keep[b.meta["degenerate"]] = False
    report["excluded_x"] = b.x[~keep].tolist()
    rows = []
    for j, t in enumerate(b.t_grid):
        rows.append([float(t), float(np.max(b.rhs[j, keep])), float(np.max(b.inner[j, keep])),
                     float(np.max(b.se[j, keep])), bool(np.all(b.rhs[j] == b.inner[j] * math.exp(-b.lam * t)))])
    return Result(["t", "sup_rhs", "sup_inner", "max_std_error", "factor_exact"], rows, not fails, fails, report)


RUNNERS = {
    "exit-time": exp_exit_time, "semigroup": exp_semigroup, "potential": exp_potential, "revuz": exp_revuz,
    "shift-law": exp_shift_law, "solve-parabolic": exp_solve_parabolic, "solve-elliptic": exp_solve_elliptic,
    "truncation-gap": exp_truncation_gap, "apriori": exp_apriori, "transform-check": exp_transform_check,
    "verify-convergence": exp_verify_convergence, "fit-decay": exp_fit_decay,
    "oracle-compare": exp_oracle_compare,
}


# ---------------------------------------------------------------------------
# driver

def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def run_config(raw: dict, out_dir=None, seed: int | None = None, workers: int = 1) -> tuple[int, Result | None]:
    """Run one experiment; returns the exit code and the result (None on config errors)."""
    try:
        cfg = resolve_config(raw)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return 2, None
    if seed is not None:
        cfg["seed"] = int(seed)
    out = Path(out_dir or cfg.get("output") or "runs/latest")
    problem = build_problem(cfg["problem"])
    num = Numerics(**cfg["numerics"])
    exp = cfg["experiment"]
    runner = RUNNERS[exp]
    try:
        if exp == "transform-check":
            res = runner(problem, num, cfg["seed"], workers, cfg["problem"].get("h"))
        else:
            res = runner(problem, num, cfg["seed"], workers)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return 2, None
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(res.columns)
        for r in res.rows:
            w.writerow([_fmt(v) for v in r])
    manifest = {
        "artifact": "fklab", "version": __version__, "experiment": exp, "config": cfg,
        "numerics_resolved": asdict(num), "seed": cfg["seed"], "workers": workers,
        "csv_schema": {"file": "results.csv", "version": CSV_VERSION, "columns": res.columns},
        "passed": res.passed,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
    if res.report is not None:
        with open(out / "report.json", "w", encoding="utf-8") as fh:
            json.dump(_jsonable(res.report), fh, indent=2, sort_keys=True)
    if not res.passed:
        print(f"{exp}: assertion failed on {len(res.failures)} row(s)", file=sys.stderr)
        for r in res.failures[:50]:
            print("  " + ", ".join(_fmt(v) for v in r), file=sys.stderr)
        return 1, res
    return 0, res


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        return tomli.load(fh)


def list_experiments() -> str:
    lines = ["experiments:"]
    lines += [f"  {k:20s} {v}" for k, v in EXPERIMENTS.items()]
    lines.append("built-in problems:")
    lines += [f"  {k:22s} (default experiment: {v['experiment']})" for k, v in BUILTINS.items()]
    return "\n".join(lines)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fklab", description="Run a Monte Carlo experiment from a TOML config.")
    ap.add_argument("--config", type=Path)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path)
    ap.add_argument("--list-experiments", action="store_true")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.list_experiments:
        print(list_experiments())
        return 0
    if args.config is None:
        print("config error: --config is required", file=sys.stderr)
        return 2
    if args.workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        raw = load_config(args.config)
    except (OSError, tomli.TOMLDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    code, res = run_config(raw, args.out, args.seed, args.workers)
    if res is not None:
        print(f"{raw.get('experiment', raw.get('builtin'))}: {'pass' if res.passed else 'FAIL'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
