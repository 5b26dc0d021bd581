import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erf

from fklab.grid import GridFunction
from fklab.transforms import SignNonlinearity, TransformError, build_transform, pull_solution, push_solution


@pytest.fixture(scope="module")
def gauss():
    return build_transform(lambda s: s, s_max=6.0, n_nodes=601)


@pytest.fixture(scope="module")
def linear():
    return build_transform(lambda s: 0.0, s_max=5.0, n_nodes=101)


def test_zero_h_is_identity(linear):
    for s in (-2.3, 0.0, 1.7):
        assert linear.G(s) == 0.0
        assert linear.Phi(s) == pytest.approx(s, abs=1e-12)
        assert linear.H(linear.Phi(s)) == 1.0


def test_gaussian_transform(gauss):
    # G(s) = s^2, Phi(s) = int_0^s exp(-t^2) dt
    assert gauss.G(1.3) == pytest.approx(1.69, abs=1e-9)
    phi1 = math.sqrt(math.pi) / 2 * erf(1.0)
    assert phi1 == pytest.approx(0.74682, abs=1e-5)
    assert gauss.Phi(1.0) == pytest.approx(phi1, abs=1e-9)
    assert gauss.phi_range[1] == pytest.approx(math.sqrt(math.pi) / 2, abs=1e-9)
    assert gauss.H(gauss.Phi(1.0)) == pytest.approx(math.exp(-1.0), abs=1e-8)


@given(s=st.floats(-5.0, 5.0))
@settings(max_examples=40, deadline=None)
def test_round_trip(s):
    tr = _cached()
    assert abs(tr.Phi_inv(tr.Phi(s)) - s) <= 2 * tr.quad_tol


_CACHE = {}


def _cached():
    if "t" not in _CACHE:
        _CACHE["t"] = build_transform(lambda s: s / (1 + s * s), s_max=6.0, n_nodes=401)
    return _CACHE["t"]


def test_H_bounds_and_monotone(gauss):
    H = np.exp(-gauss.G_tab)
    assert np.all(H > 0) and np.all(H <= 1)
    assert math.exp(-gauss.G(0.0)) == 1.0
    # H(w) over increasing s is nonincreasing on the positive side
    mid = len(gauss.s) // 2
    assert np.all(np.diff(H[mid:]) <= 0)


def test_sign_condition_enforced():
    with pytest.raises(TransformError):
        SignNonlinearity(lambda s: -s)
    with pytest.raises(TransformError):
        build_transform(lambda s: math.nan)


def test_push_pull(gauss, linear):
    grid = np.linspace(0, 1, 5)
    zero = GridFunction(grid, np.zeros(5))
    assert np.all(push_solution(zero, gauss).values == 0)
    ones = GridFunction(grid, np.ones(5))
    assert np.allclose(pull_solution(ones, gauss).values, 0.7468241328, atol=1e-9)
    u = GridFunction(grid, np.linspace(-1, 1, 5))
    assert np.allclose(push_solution(u, linear).values, u.values, atol=1e-8)
    assert np.allclose(pull_solution(u, linear).values, u.values, atol=1e-12)


def test_push_out_of_range_names_the_point(gauss):
    w = GridFunction(np.linspace(0, 1, 3), [0.0, 0.95, 0.0])
    with pytest.raises(TransformError, match="x = 0.5"):
        push_solution(w, gauss)


def test_csv_dump(tmp_path, linear):
    path = tmp_path / "t.csv"
    linear.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "s,G,Phi,H"
    assert len(lines) == len(linear.s) + 1
