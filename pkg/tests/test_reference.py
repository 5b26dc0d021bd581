import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fklab.domains import Interval
from fklab.measures import LEBESGUE, MollifiedPoint, SurfaceMeasure, ZERO
from fklab.nonlinear import Coefficients, ProblemSpec
from fklab.process import KilledBrownian, ReflectedBrownian
from fklab.reference import (FDGrid, NeumannFlux, fd_elliptic, fd_green_matrix, fd_parabolic, fractional_elliptic,
                             stable_exit_time_ball, tent)

from conftest import sin_pi


def test_heat_eigenfunction_with_richardson(unit, kbm):
    p = ProblemSpec(unit, kbm, Coefficients(phi=sin_pi))
    u = fd_parabolic(p, 0.5, FDGrid(64), richardson=True)
    exact = math.exp(-math.pi ** 2 / 4) * np.sin(np.pi * u.grid)
    err = np.max(np.abs(u.values - exact))
    assert err <= 4 * u.meta["richardson_error"]
    assert u.meta["order"] >= 1.9


def test_semilinear_richardson_order(unit, kbm):
    p = ProblemSpec(unit, kbm, Coefficients(f=lambda x, y: -y ** 3 + 1.0, phi=sin_pi))
    u = fd_parabolic(p, 0.5, FDGrid(40), richardson=True)
    assert u.meta["order"] >= 1.9


def test_elliptic_closed_forms(unit, kbm):
    v = fd_elliptic(ProblemSpec(unit, kbm, Coefficients(g=lambda x, y: np.ones_like(x)), LEBESGUE), FDGrid(50))
    assert np.max(np.abs(v.values - v.grid * (1 - v.grid))) < 1e-12
    v = fd_elliptic(ProblemSpec(unit, kbm, Coefficients(g=lambda x, y: np.ones_like(x)),
                                MollifiedPoint(0.5, 1.0, 0.05)), FDGrid(50), exact_green=True)
    assert np.max(np.abs(v.values - tent(v.grid))) < 1e-12


def test_elliptic_cosh(unit, kbm):
    # -½v'' + v = 1, v(0) = v(1) = 0
    p = ProblemSpec(unit, kbm, Coefficients(f=lambda x, y: -y + 1.0, alpha_mono=-1.0))
    v = fd_elliptic(p, FDGrid(100))
    k = math.sqrt(2.0)
    exact = 1 - np.cosh(k * (v.grid - 0.5)) / math.cosh(k / 2)
    h = 0.01
    assert np.max(np.abs(v.values - exact)) < h ** 2


def test_zero_data_zero_solution(unit, kbm):
    assert np.all(fd_elliptic(ProblemSpec(unit, kbm, Coefficients()), FDGrid(16)).values == 0)


def test_green_matrix_symmetric(unit):
    _, G = fd_green_matrix(unit, 64)
    assert np.max(np.abs(G - G.T)) < 1e-12


@given(c=st.floats(0.0, 3.0), a=st.floats(0.0, 2.0))
@settings(max_examples=20, deadline=None)
def test_discrete_maximum_principle(c, a):
    unit = Interval(0.0, 1.0)
    p = ProblemSpec(unit, KilledBrownian(unit),
                    Coefficients(f=lambda x, y: c - a * y - y ** 3, alpha_mono=0.0))
    v = fd_elliptic(p, FDGrid(32))
    assert v.values.min() >= -1e-12


def test_neumann_mass_balance(unit):
    # ½ u_n = 1 at both ends: d/dt int u = ½ [u_x] = 2
    p = ProblemSpec(unit, ReflectedBrownian(unit), Coefficients(g=lambda x, y: np.ones_like(x)), SurfaceMeasure())
    u = fd_parabolic(p, 0.5, FDGrid(100))
    mass = np.trapezoid(u.values, u.grid)
    assert mass == pytest.approx(1.0, rel=1e-6)


def test_neumann_half_factor_against_local_time(unit):
    # E_x l_t at x = 0.5, t = 0.5 from the Monte Carlo engine (2e5 paths): 0.836
    p = ProblemSpec(unit, ReflectedBrownian(unit), Coefficients(g=lambda x, y: np.ones_like(x)), SurfaceMeasure())
    half = fd_parabolic(p, 0.5, FDGrid(100, boundary=NeumannFlux(True)))(np.array([0.5]))[0]
    full = fd_parabolic(p, 0.5, FDGrid(100, boundary=NeumannFlux(False)))(np.array([0.5]))[0]
    assert abs(half - 0.836) < 0.01
    assert abs(full - 0.836) > 0.3


def test_fdgrid_invariants():
    with pytest.raises(ValueError):
        FDGrid(4)
    with pytest.raises(ValueError):
        FDGrid(10, dt_fd=1.0).step(0.1)


def test_fractional_zero_rhs_and_refinement():
    dom = Interval(-1.0, 1.0)
    assert np.all(fractional_elliptic(1.0, dom, lambda x: np.zeros_like(x), n_cells=50).values == 0)
    a = fractional_elliptic(1.0, dom, lambda x: np.ones_like(x), n_cells=200)(np.array([0.0]))[0]
    b = fractional_elliptic(1.0, dom, lambda x: np.ones_like(x), n_cells=400)(np.array([0.0]))[0]
    # first order convergence towards the closed form value 1
    assert abs(b - 1.0) < abs(a - 1.0)
    assert abs(a - b) <= 0.004


def test_stable_exit_time_closed_form():
    assert stable_exit_time_ball(1.0, 0.0) == pytest.approx(1.0)
    assert stable_exit_time_ball(1.0, 0.6) == pytest.approx(0.8)


def test_fractional_near_two_warns():
    with pytest.warns(RuntimeWarning):
        fractional_elliptic(1.97, Interval(-1.0, 1.0), lambda x: np.ones_like(x), n_cells=20)
