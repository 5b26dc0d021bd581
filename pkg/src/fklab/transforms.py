"""Change of unknown removing a quadratic gradient term.

For a nonlinearity ``h`` with ``h(s) s >= 0`` put

    G(s) = 2 int_0^s h,   Phi(s) = int_0^s exp(-G),   H(w) = exp(-G(Phi^{-1}(w))).

If ``u_t - ½u'' + h(u) |u_x|^2 = F`` then ``w = Phi(u)`` solves
``w_t - ½w'' = H(w) F``.  ``H`` takes values in (0, 1] with ``H(0) = 1``; it
is nonincreasing for ``w >= 0`` and nondecreasing for ``w <= 0``, so for
nonnegative data (where ``w >= 0``) the transformed measure coefficient is
dissipative.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .grid import GridFunction


class TransformError(ValueError):
    pass


@dataclass(frozen=True)
class SignNonlinearity:
    """``h`` with the sign condition ``h(s) s >= 0`` checked on ``probe``."""

    h: Callable
    probe: tuple = tuple(np.linspace(-10.0, 10.0, 401))

    def __post_init__(self):
        s = np.asarray(self.probe, dtype=float)
        v = np.asarray([self.h(t) for t in s], dtype=float)
        if not np.all(np.isfinite(v)):
            raise TransformError("h is not finite on the probe grid")
        bad = s[v * s < 0]
        if len(bad):
            raise TransformError(f"sign condition h(s) s >= 0 fails at s = {bad[0]:.4g}")

    def __call__(self, s):
        return float(self.h(s))


@dataclass(frozen=True)
class TransformTriple:
    """Tabulated ``G``, ``Phi`` on ``s`` nodes over ``[-s_max, s_max]``.

    Values between nodes come from integrating ``h`` (for ``G``) and
    ``exp(-G)`` (for ``Phi``) from the nearest node, so the table only seeds
    the quadrature and every evaluation carries the same tolerance.
    """

    h: SignNonlinearity
    s: np.ndarray
    G_tab: np.ndarray
    Phi_tab: np.ndarray
    s_max: float
    quad_tol: float
    phi_range: tuple
    meta: dict = field(default_factory=dict)

    def _node(self, s):
        j = int(np.clip(np.searchsorted(self.s, s), 1, len(self.s) - 1))
        return j - 1 if s - self.s[j - 1] <= self.s[j] - s else j

    def G(self, s) -> float:
        s = float(s)
        if abs(s) > self.s_max * (1 + 1e-12):
            raise TransformError(f"s = {s} outside the tabulated range")
        j = self._node(s)
        if s == self.s[j]:
            return float(self.G_tab[j])
        return float(self.G_tab[j] + 2.0 * _quad(self.h, self.s[j], s, self.quad_tol))

    def Phi(self, s) -> float:
        s = float(s)
        if abs(s) > self.s_max * (1 + 1e-12):
            raise TransformError(f"s = {s} outside the tabulated range")
        j = self._node(s)
        if s == self.s[j]:
            return float(self.Phi_tab[j])
        g0 = self.G_tab[j]
        return float(self.Phi_tab[j] + _quad(lambda t: math.exp(-(g0 + 2.0 * _quad(self.h, self.s[j], t,
                                                                                     self.quad_tol))),
                                             self.s[j], s, self.quad_tol))

    def Phi_inv(self, w) -> float:
        """Monotone bisection, seeded by the table bracket, to ``quad_tol``."""
        w = float(w)
        lo_w, hi_w = self.Phi_tab[0], self.Phi_tab[-1]
        if not lo_w <= w <= hi_w:
            raise TransformError(f"w = {w} outside the tabulated range [{lo_w}, {hi_w}]")
        j = int(np.clip(np.searchsorted(self.Phi_tab, w), 1, len(self.s) - 1))
        a, b = self.s[j - 1], self.s[j]
        if w == self.Phi_tab[j]:
            return float(b)
        if w == self.Phi_tab[j - 1]:
            return float(a)
        while b - a > self.quad_tol:
            m = 0.5 * (a + b)
            if self.Phi(m) < w:
                a = m
            else:
                b = m
        return 0.5 * (a + b)

    def H(self, w) -> float:
        return math.exp(-self.G(self.Phi_inv(w)))

    def H_array(self, w) -> np.ndarray:
        """Vectorised ``H`` by interpolation in the fine table (used inside path kernels)."""
        return np.exp(-np.interp(w, self.Phi_tab, self.G_tab))

    def to_csv(self, path) -> None:
        """Audit dump: rows ``s, G, Phi, H`` on the tabulation nodes (``H`` at ``w = Phi(s)``)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["s", "G", "Phi", "H"])
            for s, g, p in zip(self.s, self.G_tab, self.Phi_tab):
                wr.writerow([repr(float(s)), repr(float(g)), repr(float(p)), repr(math.exp(-float(g)))])


def _quad(fn, a, b, tol):
    if a == b:
        return 0.0
    val, err = integrate.quad(fn, a, b, epsabs=tol * 1e-2, epsrel=tol * 1e-2, limit=200)
    if not err <= tol:
        raise TransformError(f"quadrature did not reach tolerance on [{a}, {b}] (error {err:.2e})")
    return val


def build_transform(h: SignNonlinearity | Callable, s_max: float = 10.0, quad_tol: float = 1e-8,
                    n_nodes: int = 2001) -> TransformTriple:
    """Tabulate ``G`` and ``Phi`` on ``[-s_max, s_max]`` by cell-wise adaptive quadrature."""
    if not isinstance(h, SignNonlinearity):
        h = SignNonlinearity(h)
    if s_max <= 0:
        raise ValueError("s_max must be positive")
    if n_nodes % 2 == 0:
        n_nodes += 1
    s = np.linspace(-s_max, s_max, n_nodes)
    mid = n_nodes // 2
    s[mid] = 0.0
    G = np.zeros(n_nodes)
    P = np.zeros(n_nodes)
    for step in (1, -1):
        rng = range(mid + step, n_nodes if step > 0 else -1, step)
        prev = mid
        for j in rng:
            G[j] = G[prev] + 2.0 * _quad(h, s[prev], s[j], quad_tol)
            g0, s0 = G[prev], s[prev]
            P[j] = P[prev] + _quad(lambda t: math.exp(-(g0 + 2.0 * _quad(h, s0, t, quad_tol))), s0, s[j],
                                   quad_tol)
            prev = j
    # Phi is strictly increasing in exact arithmetic; increments below one ulp
    # (large |s| with fast-growing G) only flatten the table
    if np.any(np.diff(P) < 0) or P[mid + 1] <= 0 or P[mid - 1] >= 0:
        raise TransformError("Phi is not increasing on the table")
    return TransformTriple(h, s, G, P, float(s_max), float(quad_tol), (float(P[0]), float(P[-1])),
                           {"n_nodes": n_nodes})


def _map(gf: GridFunction, fn, label, slope=None) -> GridFunction:
    vals = np.asarray(gf.values, dtype=float)
    out = np.empty_like(vals)
    flat_in, flat_out = vals.reshape(-1), out.reshape(-1)
    grid_idx = np.tile(np.arange(len(gf.grid)), vals.size // len(gf.grid))
    for k, v in enumerate(flat_in):
        try:
            flat_out[k] = fn(v)
        except TransformError as exc:
            raise TransformError(f"{label}: grid point x = {gf.grid[grid_idx[k]]:.6g}: {exc}") from None
    outside = gf.outside
    if not isinstance(outside, str):
        outside = fn(float(outside))
    se = None
    if slope is not None and gf.std_error is not None:
        # first-order propagation of the standard error through the map
        se = gf.std_error * np.vectorize(slope)(vals, out)
    return GridFunction(gf.grid, out, se, gf.times, outside, dict(gf.meta))


def push_solution(w: GridFunction, triple: TransformTriple) -> GridFunction:
    """``u = Phi^{-1}(w)`` pointwise."""
    return _map(w, triple.Phi_inv, "push", lambda w_, u_: math.exp(triple.G(u_)))


def pull_solution(u: GridFunction, triple: TransformTriple) -> GridFunction:
    """``w = Phi(u)`` pointwise."""
    return _map(u, triple.Phi, "pull", lambda u_, w_: math.exp(-triple.G(u_)))


__all__ = ["SignNonlinearity", "TransformTriple", "TransformError", "build_transform", "push_solution",
           "pull_solution"]
