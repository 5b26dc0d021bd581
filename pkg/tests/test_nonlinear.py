import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fklab.measures import LEBESGUE, MollifiedPoint, SurfaceMeasure
from fklab.nonlinear import (Coefficients, ConvergenceError, MCParams, ProblemRejected, ProblemSpec, apriori_check,
                             clamp, normalize_monotone, sampled_monotonicity, solve_elliptic, solve_parabolic,
                             truncation_gap)
from fklab.process import KilledBrownian, ReflectedBrownian
from fklab.reference import FDGrid, fd_elliptic, fd_parabolic

from conftest import sin_pi


def test_clamp_examples():
    assert clamp(5, 3) == 3
    assert clamp(-5, 3) == -3
    assert clamp(1, 3) == 1


@given(y=st.floats(-1e6, 1e6), c=st.floats(0, 1e6))
def test_clamp_properties(y, c):
    v = clamp(y, c)
    assert -c <= v <= c
    assert clamp(v, c) == v
    if abs(y) <= c:
        assert v == y


def test_normalization_identity_for_dissipative():
    for a in (0.0, -1.0):
        co = Coefficients(f=lambda x, y: -y, alpha_mono=a)
        nm = normalize_monotone(co)
        assert not nm.active and nm.weight(3.0) == 1.0
        x = np.linspace(0, 1, 5)
        assert np.array_equal(nm.f(1.0, x, x), co.f_at(x, x))


def test_normalization_makes_driver_dissipative(unit):
    co = Coefficients(f=lambda x, y: 2 * y, alpha_mono=2.0)
    nm = normalize_monotone(co)
    assert sampled_monotonicity(lambda x, y: nm.f(0.7, x, y), unit) <= 1e-12


def test_monotonicity_probe_rejects(unit, kbm):
    co = Coefficients(f=lambda x, y: y ** 3)
    with pytest.raises(ProblemRejected):
        solve_parabolic(ProblemSpec(unit, kbm, co), 0.1, 1, 5, MCParams(n_paths=10))
    with pytest.raises(ProblemRejected):
        ProblemSpec(unit, kbm, Coefficients(g=lambda x, y: 1.0), SurfaceMeasure())
    with pytest.raises(ProblemRejected):
        ProblemSpec(unit, KilledBrownian(unit, 1.0), Coefficients())


def test_increasing_g_rejected(unit, kbm):
    p = ProblemSpec(unit, kbm, Coefficients(g=lambda x, y: y), LEBESGUE)
    with pytest.raises(ProblemRejected):
        solve_elliptic(p, mc=MCParams(n_paths=10))


def test_linear_parabolic_matches_semigroup(unit, kbm):
    p = ProblemSpec(unit, kbm, Coefficients(phi=sin_pi))
    u = solve_parabolic(p, 0.2, 1, 11, MCParams(n_paths=20_000), seed=1)
    target = math.exp(-math.pi ** 2 * 0.1) * np.sin(np.pi * u.grid)
    assert np.all(np.abs(u.values[-1] - target) <= 3 * u.std_error[-1] + 0.02 * target.max())
    # paths started on the boundary die at once and keep phi there
    assert u.values[-1, 0] == 0.0 and abs(u.values[-1, -1]) < 1e-15


def test_elliptic_lebesgue_source(unit, kbm):
    p = ProblemSpec(unit, kbm, Coefficients(g=lambda x, y: np.ones_like(x)), LEBESGUE)
    v = solve_elliptic(p, grid=11, mc=MCParams(n_paths=10_000), seed=2)
    target = v.grid * (1 - v.grid)
    assert np.all(np.abs(v.values - target) <= 3 * v.std_error + 0.003)
    assert v.meta["linear_shortcut"] and v.meta["trace"][-1] == 0.0


def test_elliptic_zero_data_one_sweep(unit, kbm):
    v = solve_elliptic(ProblemSpec(unit, kbm, Coefficients()), grid=5, mc=MCParams(n_paths=100))
    assert np.all(v.values == 0.0)
    assert len(v.meta["trace"]) == 2


def test_elliptic_semilinear_against_fd_and_trace(unit, kbm):
    p = ProblemSpec(unit, kbm, Coefficients(f=lambda x, y: -y ** 3 + 1.0))
    grid = np.linspace(0, 1, 11)
    v = solve_elliptic(p, grid=grid, mc=MCParams(n_paths=5000, tol=1e-4), seed=3)
    ref = fd_elliptic(p, FDGrid(200))
    err = np.abs(v.values - ref(grid))
    assert np.all(err <= 3 * v.std_error + 0.01)
    tr = v.meta["trace"]
    assert all(b <= 1.5 * a for a, b in zip(tr[1:], tr[2:]))


def test_elliptic_monotone_in_data(unit, kbm):
    grid = np.linspace(0, 1, 7)
    mc = MCParams(n_paths=3000)
    lo = solve_elliptic(ProblemSpec(unit, kbm, Coefficients(f=lambda x, y: -y + 1.0, alpha_mono=-1.0)),
                        grid=grid, mc=mc, seed=4)
    hi = solve_elliptic(ProblemSpec(unit, kbm, Coefficients(f=lambda x, y: -y + 1.5, alpha_mono=-1.0)),
                        grid=grid, mc=mc, seed=4)
    assert np.all(hi.values >= lo.values - 3 * (hi.std_error + lo.std_error))


def test_elliptic_nonconvergence_carries_trace(unit, kbm):
    p = ProblemSpec(unit, kbm, Coefficients(f=lambda x, y: -y ** 3 + 1.0))
    with pytest.raises(ConvergenceError) as info:
        solve_elliptic(p, grid=5, mc=MCParams(n_paths=200, j_max=1, tol=0.0))
    assert len(info.value.trace) == 1


def test_parabolic_positivity(unit, kbm):
    p = ProblemSpec(unit, kbm, Coefficients(f=lambda x, y: 1.0 - y ** 3, phi=sin_pi), MollifiedPoint(0.5, 1.0, 0.1))
    u = solve_parabolic(p, 0.3, 3, 11, MCParams(n_paths=2000), seed=5)
    assert np.all(u.values >= -3 * u.std_error - 1e-3)


def test_parabolic_reflected_with_killing_against_fd(unit):
    proc = ReflectedBrownian(unit, 1.0)
    p = ProblemSpec(unit, proc, Coefficients(g=lambda x, y: np.ones_like(x), lam=1.0), SurfaceMeasure())
    u = solve_parabolic(p, 0.5, 2, 5, MCParams(n_paths=10_000, dt=1e-3), seed=6)
    ref = fd_parabolic(p, 0.5, FDGrid(200))
    fd = ref.slice(-1)(u.grid) if ref.times is not None else ref(u.grid)
    assert np.all(np.abs(u.values[-1] - fd) <= 3 * u.std_error[-1] + 0.02)


def test_parabolic_workers_do_not_change_results(unit, kbm):
    p = ProblemSpec(unit, kbm, Coefficients(f=lambda x, y: -y, phi=sin_pi, alpha_mono=-1.0))
    a = solve_parabolic(p, 0.1, 1, 5, MCParams(n_paths=2500, workers=1), seed=7)
    b = solve_parabolic(p, 0.1, 1, 5, MCParams(n_paths=2500, workers=2), seed=7)
    assert np.array_equal(a.values, b.values)


def test_truncation_gap_trivial_cases(unit, kbm):
    p = ProblemSpec(unit, kbm, Coefficients())
    rep = truncation_gap(p, 0.5, 1.0, 5, MCParams(n_paths=500))
    assert np.all(rep.rhs == 0.0) and rep.ok
    rep = truncation_gap(p, 1.0, 1.0, 5)
    assert np.all(rep.lhs == 0.0) and np.all(rep.rhs == 0.0)


def test_apriori_zero_data(unit, kbm):
    p = ProblemSpec(unit, kbm, Coefficients())
    u = solve_parabolic(p, 0.2, 1, 5, MCParams(n_paths=200))
    rep = apriori_check(p, 0.2, u, mc=MCParams(n_paths=200))
    assert np.all(rep.lhs == 0.0) and rep.ok
