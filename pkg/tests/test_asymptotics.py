import json
import math

import numpy as np
import pytest

from fklab.asymptotics import (FACTOR_NOTE, BoundValues, InsufficientSignal, bound_rhs, bound_values, fit_decay,
                               fit_series, source_potential, verify_convergence)
from fklab.measures import LEBESGUE, MollifiedPoint
from fklab.nonlinear import Coefficients, MCParams, ProblemSpec
from fklab.process import KilledBrownian

from conftest import sin_pi


def heat(unit, lam=0.0):
    return ProblemSpec(unit, KilledBrownian(unit, lam), Coefficients(phi=sin_pi, lam=lam))


def test_zero_data_bound_is_zero(unit, kbm):
    p = ProblemSpec(unit, kbm, Coefficients())
    est = bound_rhs(p, 0.5, 0.5, MCParams(n_paths=200))
    assert est.mean == 0.0


def test_bound_of_eigenfunction(unit):
    est = bound_rhs(heat(unit), 0.2, 0.5, MCParams(n_paths=40_000), seed=1)
    target = 3 * math.exp(-math.pi ** 2 * 0.1)
    assert target == pytest.approx(1.1180, abs=2e-4)
    assert abs(est.mean - target) <= 3 * est.std_error + 0.02 * target


def test_killing_factorization_bit_exact(unit):
    mc = MCParams(n_paths=2000)
    b = bound_values(heat(unit, 1.0), [0.1, 0.3], 5, mc, seed=4)
    assert b.factorization_exact
    b0 = bound_values(heat(unit, 0.0), [0.1, 0.3], 5, mc, seed=4)
    # with phi only, the inner value does not see lambda at all
    assert np.array_equal(b.inner, b0.inner)
    for j, t in enumerate(b.t_grid):
        assert np.all(b.rhs[j] == b0.rhs[j] * math.exp(-t))


def test_rhs_nonincreasing_in_t(unit):
    p = ProblemSpec(unit, KilledBrownian(unit), Coefficients(f=lambda x, y: 1.0 - y, phi=sin_pi, alpha_mono=-1.0))
    b = bound_values(p, [0.1, 0.2, 0.4, 0.8], 5, MCParams(n_paths=4000), seed=2)
    for j in range(3):
        assert np.all(b.rhs[j + 1] <= b.rhs[j] + 3 * (b.se[j] + b.se[j + 1]))


def test_source_potential_lebesgue(unit, kbm):
    p = ProblemSpec(unit, kbm, Coefficients(f=lambda x, y: 1.0 - y, alpha_mono=-1.0))
    psi = source_potential(p, np.linspace(0, 1, 5), MCParams(n_paths=10_000), seed=3)
    exact = psi.grid * (1 - psi.grid)
    assert np.all(np.abs(psi.values - exact) <= 3 * psi.std_error + 0.003)


def test_linear_heat_gap_has_headroom(unit, tmp_path):
    rep = verify_convergence(heat(unit), [0.25, 0.5], 5, MCParams(n_paths=2000, delta=0.25), seed=5)
    assert rep.ok
    # v = 0, so gap = |P_t phi| and rhs = 3 P_t |phi| from independent paths
    assert np.all(rep.v == 0.0)
    assert FACTOR_NOTE in json.dumps(rep.to_dict())
    assert "3" in rep.meta["factor_3"] and "e" in rep.meta["factor_3"]
    rep.to_csv(tmp_path / "gap.csv")
    head = (tmp_path / "gap.csv").read_text().splitlines()[0]
    assert head == "t,x,u,v,gap,rhs,slack,pass"


def test_point_source_gap(unit, kbm):
    p = ProblemSpec(unit, kbm, Coefficients(g=lambda x, y: np.ones_like(x)), MollifiedPoint(0.5, 1.0, 0.05))
    rep = verify_convergence(p, [0.2, 0.4], 5, MCParams(n_paths=2000, delta=0.1), seed=6)
    assert rep.ok, rep.failing_rows()


def test_t_grid_must_align_with_slices(unit):
    with pytest.raises(ValueError):
        verify_convergence(heat(unit), [0.13], 5, MCParams(n_paths=100, delta=0.05))


def test_fit_decay_heat_eigenvalue(unit):
    b = bound_values(heat(unit), [0.1, 0.2, 0.3, 0.4], 5, MCParams(n_paths=20_000), seed=7)
    slope, r2 = fit_decay(b, "exponential")
    assert abs(slope + math.pi ** 2 / 2) <= 0.1 * math.pi ** 2 / 2
    assert r2 > 0.99


def test_fit_decay_insufficient_signal():
    t = np.array([1.0, 2.0, 3.0, 4.0])
    b = BoundValues(t, np.array([0.5]), np.full((4, 1), 1e-6), np.full((4, 1), 1e-6), np.full((4, 1), 1e-6), 0.0)
    with pytest.raises(InsufficientSignal):
        fit_decay(b)


def test_fit_decay_skips_zero_lifetime_starts():
    # wall column stays at 3|phi(x0)| = 3 forever; the interior one decays like 1/t
    t = np.array([0.5, 1.0, 2.0, 4.0])
    vals = np.column_stack([np.full(4, 3.0), 1.0 / t, np.full(4, 3.0)])
    b = BoundValues(t, np.array([-1.0, 0.0, 1.0]), vals, vals, np.zeros((4, 3)), 0.0, {"degenerate": [0, 2]})
    slope, _ = fit_decay(b, "power")
    assert slope == pytest.approx(-1.0)
    b.meta["degenerate"] = []
    assert fit_decay(b, "power")[0] == pytest.approx(0.0)


def test_fit_series_power():
    t = np.array([0.5, 1, 2, 4])
    slope, r2 = fit_series(t, 3 * t ** -1.0)
    assert slope == pytest.approx(-1.0) and r2 == pytest.approx(1.0)
