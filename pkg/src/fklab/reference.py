"""Deterministic one-dimensional oracles.

* ``fd_parabolic``: Crank-Nicolson for ``u_t = ½u'' - lambda u + N(x, u, u_x)``
  with the nonlinearity lagged and one midpoint corrector per step.
* ``fd_elliptic``: shifted Picard iteration on tridiagonal solves of
  ``-½v'' + lambda v = f(x, v) + g(x, v) rho(x)``.
* ``fractional_elliptic``: quadrature discretization of the fractional
  Laplacian on an interval with zero exterior data.

Killed problems use zero Dirichlet data; reflected problems use the flux
condition ``c ∂_n u = g(x, u) w(x)`` on each end, with ``c = ½`` by default
(the pairing that matches boundary local time normalised as twice the
Skorokhod regulator).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg, special

from .domains import Box
from .feynman_kac import green_function
from .grid import GridFunction
from .measures import MollifiedPoint, SurfaceMeasure, components, density_part
from .process import ReflectedBrownian, UnsupportedOperation


class FDError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg if trace is None else f"{msg}; trace={trace}")
        self.trace = trace


@dataclass(frozen=True)
class NeumannFlux:
    """Flux boundary condition; ``half_factor`` selects ``½∂_n u = g`` over ``∂_n u = g``."""

    half_factor: bool = True

    @property
    def coefficient(self) -> float:
        return 0.5 if self.half_factor else 1.0


DIRICHLET0 = "dirichlet0"


@dataclass(frozen=True)
class FDGrid:
    n_cells: int = 200
    dt_fd: float | None = None
    boundary: object = None  # None follows the process

    def __post_init__(self):
        if self.n_cells < 8:
            raise ValueError("n_cells must be >= 8")

    def nodes(self, a, b) -> np.ndarray:
        return np.linspace(a, b, self.n_cells + 1)

    def step(self, h) -> float:
        dt = h if self.dt_fd is None else self.dt_fd
        if dt > h + 1e-15:
            raise ValueError("dt_fd must not exceed the mesh width")
        return dt

    def refined(self) -> "FDGrid":
        return FDGrid(2 * self.n_cells, None if self.dt_fd is None else self.dt_fd / 2, self.boundary)


def _interval(domain):
    if not (isinstance(domain, Box) and domain.dim == 1):
        raise UnsupportedOperation("finite-difference oracles are one-dimensional")
    return float(domain.lows[0]), float(domain.highs[0])


def fd_grid_for(problem, n_cells=200, dt_fd=None, half_factor=True) -> FDGrid:
    """Boundary type follows the process: killed -> Dirichlet, reflected -> flux."""
    bc = NeumannFlux(half_factor) if isinstance(problem.process, ReflectedBrownian) else DIRICHLET0
    return FDGrid(n_cells, dt_fd, bc)


class _Setup:
    """Nodes, source density and boundary weights for one problem."""

    def __init__(self, problem, grid: FDGrid, exact_point=False):
        a, b = _interval(problem.domain)
        self.a, self.b = a, b
        self.x = grid.nodes(a, b)
        self.h = (b - a) / grid.n_cells
        self.co = problem.coefficients
        self.lam = self.co.lam
        bc = grid.boundary
        if bc is None:
            bc = NeumannFlux() if isinstance(problem.process, ReflectedBrownian) else DIRICHLET0
        self.neumann = isinstance(bc, NeumannFlux)
        if self.neumann != isinstance(problem.process, ReflectedBrownian):
            raise ValueError("flux boundary pairs with the reflected process")
        self.flux_c = bc.coefficient if self.neumann else None
        parts = components(problem.measure)
        vol = [m for m in parts if not isinstance(m, SurfaceMeasure)]
        surf = [m for m in parts if isinstance(m, SurfaceMeasure)]
        self.rho = np.zeros(len(self.x))
        for m in vol:
            if exact_point and isinstance(m, MollifiedPoint):
                self.rho += self._discrete_delta(m.x0[0]) * m.mass
            else:
                self.rho += density_part(m, self.x[:, None])
        self.wall = np.zeros(2)
        for m in surf:
            self.wall += m.boundary_weight(np.array([a, b]))
        sl = slice(None) if self.neumann else slice(1, -1)
        self.sl = sl
        self.xi = self.x[sl]
        self.n = len(self.xi)

    def _discrete_delta(self, x0):
        j = (x0 - self.a) / self.h
        i = min(int(math.floor(j)), len(self.x) - 2)
        fr = j - i
        out = np.zeros(len(self.x))
        out[i] += (1 - fr) / self.h
        out[i + 1] += fr / self.h
        return out

    def laplacian_banded(self, scale=0.5):
        """Banded form of ``scale * D2`` on the unknowns (ghost-node reflection for flux ends)."""
        n, h2 = self.n, self.h ** 2
        ab = np.zeros((3, n))
        ab[0, 1:] = scale / h2
        ab[1, :] = -2 * scale / h2
        ab[2, :-1] = scale / h2
        if self.neumann:
            ab[0, 1] = 2 * scale / h2
            ab[2, -2] = 2 * scale / h2
        return ab

    def full(self, ui):
        if self.neumann:
            return ui
        out = np.zeros(len(self.x))
        out[1:-1] = ui
        return out

    def source(self, ui, gradient=None):
        """Nonlinear right side at the unknowns, including boundary flux sources."""
        u = self.full(ui)
        x = self.x
        out = self.co.f_at(x, u).copy()
        if self.co.g is not None:
            out = out + self.co.g_at(x, u) * self.rho
            if self.neumann and self.wall.any():
                # ghost node u_{-1} = u_1 + 2h g w / c turns ½ D2 into a source g w / (c h)
                gw = self.co.g_at(x[[0, -1]], u[[0, -1]]) * self.wall
                out[0] += gw[0] / (self.flux_c * self.h)
                out[-1] += gw[1] / (self.flux_c * self.h)
        if gradient is not None:
            ux = np.gradient(u, self.h)
            if self.neumann:
                ux[0] = ux[-1] = 0.0
            out = out + gradient(x, u, ux)
        return out[self.sl]


def _matvec(ab, v):
    out = ab[1] * v
    out[:-1] += ab[0, 1:] * v[1:]
    out[1:] += ab[2, :-1] * v[:-1]
    return out


def _cn(problem, T, grid: FDGrid, times, gradient, exact_point=False):
    s = _Setup(problem, grid, exact_point)
    dt = grid.step(s.h)
    n_steps = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / n_steps
    A = s.laplacian_banded()
    A[1] -= s.lam
    lhs = -0.5 * dt * A
    lhs[1] += 1.0
    u = s.co.phi_at(s.x)[s.sl].astype(float)
    snaps = sorted(set(times))
    snap_steps = {int(round(t / dt)): t for t in snaps}
    out = {}
    if 0 in snap_steps:
        out[snap_steps[0]] = s.full(u).copy()
    trace = []
    for k in range(1, n_steps + 1):
        base = u + 0.5 * dt * _matvec(A, u)
        n0 = s.source(u, gradient)
        pred = linalg.solve_banded((1, 1), lhs, base + dt * n0)
        n1 = s.source(0.5 * (u + pred), gradient)
        new = linalg.solve_banded((1, 1), lhs, base + dt * n1)
        res = float(np.max(np.abs(new - pred)))
        if not np.all(np.isfinite(new)):
            raise FDError("corrector diverged", trace[-10:] + [res])
        trace.append(res)
        u = new
        if k in snap_steps:
            out[snap_steps[k]] = s.full(u).copy()
    return s, out, trace


def fd_parabolic(problem, T: float, grid: FDGrid | None = None, times=None,
                 gradient: Callable | None = None, richardson: bool = False,
                 exact_point: bool = False) -> GridFunction:
    """Crank-Nicolson solution at ``T`` (or at each of ``times``, on a time-space grid).

    ``gradient(x, u, u_x)`` adds a first-order term to the right side.  With
    ``richardson`` the solve is repeated on two refinements;
    ``meta["richardson_error"]`` is the extrapolated error estimate at ``T``
    and ``meta["order"]`` the observed order.
    """
    grid = grid or fd_grid_for(problem)
    if T <= 0:
        raise ValueError("T must be positive")
    ts = [T] if times is None else sorted(set([float(t) for t in times] + [T]))
    s, out, trace = _cn(problem, T, grid, ts, gradient, exact_point)
    outside = "clamp" if s.neumann else 0.0
    meta = {"n_cells": grid.n_cells, "h": s.h, "corrector_max": max(trace) if trace else 0.0}
    if richardson:
        uT = out[T]
        _, o2, _ = _cn(problem, T, grid.refined(), [T], gradient, exact_point)
        _, o4, _ = _cn(problem, T, grid.refined().refined(), [T], gradient, exact_point)
        u2 = o2[T][::2]
        u4 = o4[T][::4]
        e1 = np.max(np.abs(uT - u2))
        e2 = np.max(np.abs(u2 - u4))
        meta["order"] = float(math.log2(e1 / e2)) if e2 > 0 and e1 > 0 else math.inf
        meta["richardson_error"] = float(e1 / 3.0)
    if times is None:
        return GridFunction(s.x, out[T], None, None, outside, meta)
    return GridFunction(s.x, np.array([out[t] for t in ts]), None, np.array(ts), outside, meta)


def _shift(co, x):
    """Largest sampled decrease rate of f in y, used to make Picard contract."""
    if co.f is None:
        return 0.0
    ys = np.linspace(-3, 3, 13)
    worst = 0.0
    for y1, y2 in zip(ys[:-1], ys[1:]):
        d = (co.f_at(x, np.full(len(x), y2)) - co.f_at(x, np.full(len(x), y1))) / (y2 - y1)
        worst = max(worst, float(np.max(-d)))
    return worst


def fd_elliptic(problem, grid: FDGrid | None = None, exact_green: bool = False, tol: float = 1e-12,
                max_iter: int = 500) -> GridFunction:
    """Solve ``-½v'' + lambda v = f(x, v) + g(x, v) mu`` by shifted Picard iteration.

    ``exact_green`` replaces a mollified point mass by the discrete delta of
    mass 1/h split between the two nearest nodes, for which the three-point
    scheme reproduces the Green function exactly at the nodes.
    """
    grid = grid or fd_grid_for(problem)
    s = _Setup(problem, grid, exact_green)
    if s.neumann and s.lam == 0:
        raise FDError("reflected elliptic problem needs lambda > 0")
    c = _shift(s.co, s.x)
    A = -s.laplacian_banded()
    A[1] += s.lam + c
    v = np.zeros(s.n)
    trace = []
    for _ in range(max_iter):
        new = linalg.solve_banded((1, 1), A, s.source(v) + c * v)
        change = float(np.max(np.abs(new - v)))
        trace.append(change)
        v = new
        if not np.isfinite(change):
            break
        if change <= tol * max(1.0, float(np.max(np.abs(v)))):
            return GridFunction(s.x, s.full(v), None, None, "clamp" if s.neumann else 0.0,
                                {"trace": trace, "n_cells": grid.n_cells, "h": s.h})
    raise FDError("Picard iteration did not converge", trace[-10:])


def fd_green_matrix(domain, n_cells: int, lam: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Discrete Green function ``G[i, j]`` at interior nodes (inverse operator over h)."""
    a, b = _interval(domain)
    x = np.linspace(a, b, n_cells + 1)[1:-1]
    h = (b - a) / n_cells
    n = len(x)
    A = (np.diag(np.full(n, 1.0 / h ** 2 + lam)) - np.diag(np.full(n - 1, 0.5 / h ** 2), 1)
         - np.diag(np.full(n - 1, 0.5 / h ** 2), -1))
    return x, np.linalg.inv(A) / h


def fractional_constant(alpha: float) -> float:
    """Constant of the singular integral whose symbol is ``|xi|^alpha`` in one dimension."""
    return alpha * 2 ** (alpha - 1) * special.gamma((1 + alpha) / 2) / (math.sqrt(math.pi)
                                                                          * special.gamma(1 - alpha / 2))


def _pow_int(p, q, alpha):
    """``int_p^q s^(-alpha) ds``."""
    if alpha == 1.0:
        return np.log(q / p)
    return (q ** (1 - alpha) - p ** (1 - alpha)) / (1 - alpha)


def fractional_matrix(alpha: float, a: float, b: float, n_cells: int) -> tuple[np.ndarray, np.ndarray]:
    """Matrix of ``(-Δ)^{alpha/2}`` on interior nodes with zero exterior values.

    The near field ``|y - x_i| < h`` uses the second difference
    (``u'' h^{2-alpha} / (2-alpha)`` per side pair), the rest of the domain
    integrates the piecewise-linear interpolant exactly against the kernel,
    and the exterior contributes ``u(x_i)`` times the closed-form tail.
    """
    if not 0 < alpha < 2:
        raise ValueError("alpha must lie in (0, 2)")
    if alpha > 1.95:
        warnings.warn("alpha near 2: the quadrature matrix is badly conditioned", RuntimeWarning, stacklevel=2)
    h = (b - a) / n_cells
    x = np.linspace(a, b, n_cells + 1)
    n = n_cells - 1
    C = fractional_constant(alpha)
    M = np.zeros((n, n))
    near = h ** (2 - alpha) / (2 - alpha) / h ** 2
    k_self = 2.0 * h ** (-alpha) / alpha  # int_{|s|>h} |s|^{-1-alpha} ds
    for i in range(1, n_cells):
        r = i - 1
        M[r, r] += C * (k_self + 2 * near)
        if i - 1 >= 1:
            M[r, r - 1] -= C * near
        if i + 1 <= n_cells - 1:
            M[r, r + 1] -= C * near
        # far cells: integrate u(y) K(y) over each cell beyond distance h
        for j in range(n_cells):
            lo_d, hi_d = x[j] - x[i], x[j + 1] - x[i]
            if j >= i + 1:
                p, q = lo_d, hi_d
                near_node, far_node = j, j + 1
            elif j + 1 <= i - 1:
                p, q = -hi_d, -lo_d
                near_node, far_node = j + 1, j
            else:
                continue
            k0 = (p ** -alpha - q ** -alpha) / alpha
            k1 = _pow_int(p, q, alpha)
            # hat functions in distance s: near node (q - s)/h, far node (s - p)/h
            w_near = (q * k0 - k1) / h
            w_far = (k1 - p * k0) / h
            for node, w in ((near_node, w_near), (far_node, w_far)):
                if 1 <= node <= n_cells - 1:
                    M[r, node - 1] -= C * w
    return x[1:-1], M


def fractional_elliptic(alpha_stable: float, interval, rhs, n_cells: int = 400) -> GridFunction:
    """Solve ``(-Δ)^{alpha/2} u = rhs`` on the interval, ``u = 0`` outside.

    The solution is the potential ``E_x int_0^zeta rhs(X_t) dt`` of the
    symmetric stable process with symbol ``|xi|^alpha`` killed on exit.
    """
    a, b = _interval(interval)
    xi, M = fractional_matrix(alpha_stable, a, b, n_cells)
    f = np.broadcast_to(np.asarray(rhs(xi) if callable(rhs) else rhs, dtype=float), xi.shape)
    u = np.zeros(n_cells + 1)
    u[1:-1] = np.linalg.solve(M, f)
    return GridFunction(np.linspace(a, b, n_cells + 1), u, None, None, 0.0,
                        {"alpha_stable": alpha_stable, "n_cells": n_cells, "cond": float(np.linalg.cond(M))})


def stable_exit_time_ball(alpha: float, x, r: float = 1.0, d: int = 1):
    """Closed-form mean exit time of the symmetric stable process from a centred ball."""
    x = np.asarray(x, dtype=float)
    return (special.gamma(d / 2) * np.maximum(r * r - x * x, 0.0) ** (alpha / 2)
            / (2 ** alpha * special.gamma(1 + alpha / 2) * special.gamma((d + alpha) / 2)))


def tent(x, x0: float = 0.5, a: float = 0.0, b: float = 1.0):
    """Green function of ``-½ d²/dx²`` on (a, b) with the pole at ``x0``."""
    return green_function(Box((a,), (b,)), x, x0)


__all__ = [
    "FDGrid", "NeumannFlux", "DIRICHLET0", "fd_grid_for", "fd_parabolic", "fd_elliptic", "fd_green_matrix",
    "fractional_elliptic", "fractional_matrix", "fractional_constant", "stable_exit_time_ball", "tent",
    "green_function", "FDError",
]
