"""Smooth measures and their additive functionals along simulated paths.

Three kinds of measure are supported: a Lebesgue density, a weighted surface
measure on the boundary (paired with reflected Brownian motion, whose
boundary local time is its additive functional) and a point mass smoothed by
a radial hat kernel.  Sums of these are allowed and act linearly.

Functions attached to measures take ``x`` as a 1-D array for one-dimensional
domains and as an ``(n, d)`` array otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .domains import Ball, Box, DomainError, FullSpace
from .process import (CHUNK, Integrand, MCEstimate, PathBundle, PathSample, ReflectedBrownian,
                      UnsupportedOperation, chunk_generator, iter_bundles, steps_for)

N_TABLE_CELLS = 4096


def call_x(fn, x: np.ndarray, *args):
    """Call ``fn`` on points ``x`` of shape (n, d) using the 1-D convention."""
    x = np.asarray(x, dtype=float)
    xs = x[:, 0] if x.ndim == 2 and x.shape[1] == 1 else x
    out = fn(xs, *args)
    return np.broadcast_to(np.asarray(out, dtype=float), (len(x),))


@dataclass(frozen=True)
class LebesgueDensity:
    """``beta(x) dx``; ``beta=None`` means the Lebesgue measure itself."""

    beta: Callable | None = None
    total_mass_hint: float | None = None

    def density(self, x):
        x = np.asarray(x, dtype=float)
        if self.beta is None:
            return np.ones(len(x))
        return call_x(self.beta, x)


@dataclass(frozen=True)
class SurfaceMeasure:
    """``weight(x) sigma(dx)`` on the boundary; for an interval sigma is one unit atom per end."""

    weight: Callable | None = None
    total_mass_hint: float | None = None

    def boundary_weight(self, x):
        x = np.asarray(x, dtype=float)
        if self.weight is None:
            return np.ones(len(x))
        return call_x(self.weight, x)


def _sphere_area(d):
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


@dataclass(frozen=True)
class MollifiedPoint:
    """``mass * delta_{x0}`` smoothed by the radial hat kernel of radius ``eps``."""

    x0: tuple
    mass: float = 1.0
    eps: float = 0.05
    total_mass_hint: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        if not self.eps > 0 or not self.mass > 0:
            raise ValueError("eps and mass must be positive")

    @property
    def dim(self):
        return len(self.x0)

    def density(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        r = np.linalg.norm(x - np.asarray(self.x0), axis=1)
        d = self.dim
        norm = _sphere_area(d) * self.eps ** d / (d * (d + 1))
        return self.mass * np.maximum(1.0 - r / self.eps, 0.0) / norm


@dataclass(frozen=True)
class MeasureSum:
    parts: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))


SmoothMeasure = LebesgueDensity | SurfaceMeasure | MollifiedPoint | MeasureSum
LEBESGUE = LebesgueDensity()
ZERO = MeasureSum(())


def components(measure) -> list:
    """Flatten nested sums into a list of elementary measures."""
    if isinstance(measure, MeasureSum):
        out = []
        for p in measure.parts:
            out.extend(components(p))
        return out
    return [measure]


def is_zero(measure) -> bool:
    return not components(measure)


def has_surface_part(measure) -> bool:
    return any(isinstance(m, SurfaceMeasure) for m in components(measure))


def density_part(measure, x) -> np.ndarray:
    """Sum of the densities of the non-surface components at ``x`` (n, d)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(len(x))
    for m in components(measure):
        if not isinstance(m, SurfaceMeasure):
            out += m.density(x)
    return out


def _probe_points(domain, n=257):
    if isinstance(domain, Box):
        axes = [np.linspace(lo, hi, n if domain.dim == 1 else 17) for lo, hi in zip(domain.lows, domain.highs)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, domain.dim)
    rng = np.random.default_rng(12345)
    if isinstance(domain, Ball):
        return domain.sample_uniform(rng, 2000)
    return rng.normal(scale=3.0, size=(2000, domain.dim))


def validate_measure(measure, domain) -> None:
    """Check nonnegativity on a probe grid and that mollifier supports sit inside ``domain``."""
    for m in components(measure):
        if isinstance(m, SurfaceMeasure):
            if not isinstance(domain, Box):
                raise DomainError("surface measures are supported on intervals and boxes")
            pts = _boundary_points(domain)
            vals = m.boundary_weight(pts)
        else:
            if isinstance(m, MollifiedPoint):
                if m.dim != domain.dim:
                    raise DomainError("mollified point has the wrong dimension")
                c = np.asarray(m.x0)[None, :]
                if domain.bounded and not (domain.contains(c)[0] and domain.boundary_distance(c)[0] > m.eps):
                    raise DomainError(f"mollifier support around {m.x0} leaves the domain")
            vals = m.density(_probe_points(domain))
        if np.any(~np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError(f"measure {m!r} takes negative or non-finite values on the probe grid")


def _boundary_points(domain: Box) -> np.ndarray:
    if domain.dim == 1:
        return np.array([[domain.lows[0]], [domain.highs[0]]])
    pts = []
    probe = _probe_points(domain)
    for i in range(domain.dim):
        for v in (domain.lows[i], domain.highs[i]):
            face = probe.copy()
            face[:, i] = v
            pts.append(face)
    return np.concatenate(pts)


def total_mass(measure, domain) -> float:
    """mu(E) by quadrature (exact for atoms and mollified points)."""
    tot = 0.0
    for m in components(measure):
        if m.total_mass_hint is not None:
            tot += m.total_mass_hint
        elif isinstance(m, MollifiedPoint):
            tot += m.mass
        elif isinstance(m, SurfaceMeasure):
            if domain.dim != 1:
                if m.weight is not None:
                    raise UnsupportedOperation("surface mass in d > 1 is only computed for unit weight")
                sides = np.subtract(domain.highs, domain.lows)
                tot += sum(2 * np.prod(np.delete(sides, i)) for i in range(domain.dim))
            else:
                tot += float(m.boundary_weight(_boundary_points(domain)).sum())
        elif isinstance(domain, Box) and domain.dim == 1:
            a, b = domain.lows[0], domain.highs[0]
            tot += integrate.quad(lambda s: float(m.density(np.array([[s]]))[0]), a, b, limit=200)[0]
        elif domain.bounded:
            # midpoint rule on the probe grid, boxes only
            if not isinstance(domain, Box):
                raise UnsupportedOperation("density mass on non-box domains needs total_mass_hint")
            n = 64
            axes = [lo + (np.arange(n) + 0.5) * (hi - lo) / n for lo, hi in zip(domain.lows, domain.highs)]
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, domain.dim)
            tot += float(m.density(pts).mean() * domain.volume())
        else:
            raise UnsupportedOperation("total mass over the whole space needs total_mass_hint")
    return tot


# ---------------------------------------------------------------------------
# functionals on recorded paths


def _row_terms(bundle: PathBundle, measure, t_cap=None, theta: float = 0.0):
    """(discounted weights, points, times) per measure component for every recorded row."""
    terms = []
    times = bundle.row_times()
    for m in components(measure):
        if isinstance(m, SurfaceMeasure):
            if bundle.local_time_inc is None:
                raise UnsupportedOperation("surface measures need a reflected path with local time")
            inc = bundle.local_time_inc.copy()
            if t_cap is not None:
                inc[bundle.row_step > int(round(t_cap / bundle.dt))] = 0.0
            touch = inc > 0
            pts = np.where(np.isnan(bundle.contact), bundle.states, bundle.contact)
            w = np.zeros(len(inc))
            if touch.any():
                w[touch] = inc[touch] * m.boundary_weight(pts[touch])
            if theta:
                # local time accrues inside the step: discount at its midpoint
                w *= np.exp(-theta * (times - 0.5 * bundle.dt))
            terms.append((w, pts, times))
        else:
            w = bundle.time_weights(t_cap, theta) * m.density(bundle.states)
            terms.append((w, bundle.states, times))
    return terms


def af_total(bundle: PathBundle, measure, t_cap=None, theta: float = 0.0) -> np.ndarray:
    """Per-path ``int_0^{zeta ∧ t_cap} exp(-theta t) dA_t`` on a recorded bundle."""
    out = np.zeros(bundle.n_paths)
    for w, _, _ in _row_terms(bundle, measure, t_cap, theta):
        out += bundle.sum_per_path(w)
    return out


def af_integral(bundle: PathBundle, terms, t_cap=None, theta: float = 0.0) -> np.ndarray:
    """Per-path ``sum_i int exp(-theta t) fn_i(t, X_t) dA^{mu_i}_t`` on a recorded bundle.

    ``terms`` is a list of ``(measure, fn)`` with ``fn(t, x)`` vectorized.
    """
    out = np.zeros(bundle.n_paths)
    for measure, fn in terms:
        for w, pts, t in _row_terms(bundle, measure, t_cap, theta):
            nz = w != 0
            if not nz.any():
                continue
            vals = np.zeros(len(w))
            vals[nz] = w[nz] * _eval_tx(fn, t[nz], pts[nz])
            out += bundle.sum_per_path(vals)
    return out


def _eval_tx(fn, t, x):
    xs = x[:, 0] if x.shape[1] == 1 else x
    return np.broadcast_to(np.asarray(fn(t, xs), dtype=float), (len(x),))


def _single_bundle(path: PathSample) -> PathBundle:
    n = len(path.states)
    dt = path.dt if n > 1 else 1.0
    n_steps = int(round(path.horizon / dt)) if n > 1 else 1
    b = PathBundle(dt, n_steps, path.states[:1], np.array([path.lifetime]), path.states[-1:],
                   offsets=np.array([0, n]), states=path.states)
    if path.local_time is not None:
        b.local_time_inc = np.diff(path.local_time, prepend=0.0)
        b.contact = path.contact
    return b


@dataclass
class AFPath:
    """Right-continuous step function ``t -> A_t`` sampled at ``times``."""

    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        return self.values[np.clip(idx, 0, None)]

    @property
    def total(self) -> float:
        return float(self.values[-1])


def evaluate_af(path: PathSample, measure) -> AFPath:
    """The additive functional of ``measure`` along one path.

    Density parts use the trapezoid rule on the time grid (left rectangle on
    the last partial step before the lifetime); surface parts sum the local
    time increments weighted at the contact point.
    """
    b = _single_bundle(path)
    n = len(path.states)
    inc = np.zeros(n)
    tail = 0.0
    for m in components(measure):
        if isinstance(m, SurfaceMeasure):
            if path.local_time is None:
                raise UnsupportedOperation("surface measures need a reflected path with local time")
            w = _row_terms(b, m)[0][0]
            inc += w
            continue
        beta = m.density(path.states)
        if n > 1:
            inc[1:] += 0.5 * path.dt * (beta[:-1] + beta[1:])
        if math.isfinite(path.lifetime):
            tail += beta[-1] * (path.lifetime - path.times[-1])
    values = np.cumsum(inc)
    times = path.times
    if math.isfinite(path.lifetime):
        times = np.append(times, path.lifetime)
        values = np.append(values, values[-1] + tail)
    return AFPath(np.asarray(times, dtype=float), values)


def weighted_af_integral(path: PathSample, measure, integrand: Callable, fld=0.0, t_cap=None) -> float:
    """``int_0^{zeta ∧ horizon} integrand(X_s, field(X_s)) dA_s`` along one path.

    ``fld`` is a constant or a callable of ``x`` (e.g. a GridFunction).
    """
    def fn(t, x):
        y = fld(x) if callable(fld) else np.full(len(np.atleast_1d(x)), float(fld))
        return integrand(x, y)

    b = _single_bundle(path)
    return float(af_integral(b, [(measure, fn)], t_cap)[0])


# ---------------------------------------------------------------------------
# path integrals, fused (1D) or from recorded rows


@dataclass
class PathIntegrals:
    """Per-path integrals at each snapshot time plus positions there (NaN once killed)."""

    snap_times: np.ndarray
    values: np.ndarray
    snap_x: np.ndarray
    lifetime: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return len(self.lifetime)

    def alive(self, j: int = -1) -> np.ndarray:
        return ~np.isnan(self.snap_x[:, j, 0])


def fused_supported(spec) -> bool:
    dom = spec.domain
    return isinstance(dom, Box) and dom.dim == 1


def table_grid(domain: Box, cells: int | None = None, align: int | None = None):
    """Uniform table nodes on an interval; ``align`` coarse cells divide the table evenly."""
    cells = cells or N_TABLE_CELLS
    if align:
        cells = align * max(1, math.ceil(cells / align))
    lo, hi = domain.lows[0], domain.highs[0]
    return np.linspace(lo, hi, cells + 1)


def tabulate(spec, terms, dt: float, n_steps: int, theta: float = 0.0, time_dependent: bool = False,
             cells: int | None = None, align: int | None = None) -> Integrand:
    """Tabulate ``sum_i fn_i(t, x) dA^{mu_i}`` for the fused kernel.

    With ``time_dependent`` one table row is built per time step ``k*dt``;
    otherwise ``fn`` is evaluated once at ``t = 0``.
    """
    dom = spec.domain
    xs = table_grid(dom, cells, align)
    ts = dt * np.arange(n_steps + 1) if time_dependent else np.zeros(1)
    dtab = np.zeros((len(ts), len(xs)))
    stab = np.zeros((len(ts), 2))
    walls = np.array([dom.lows[0], dom.highs[0]])
    pts = xs[:, None]
    for measure, fn in terms:
        for m in components(measure):
            if isinstance(m, SurfaceMeasure):
                if not isinstance(spec, ReflectedBrownian):
                    raise UnsupportedOperation("surface measures need the reflected process")
                w = m.boundary_weight(walls[:, None])
                for r, t in enumerate(ts):
                    stab[r] += w * np.broadcast_to(fn(t, walls), (2,))
            else:
                beta = m.density(pts)
                for r, t in enumerate(ts):
                    dtab[r] += beta * np.broadcast_to(fn(t, xs), xs.shape)
    if not (np.all(np.isfinite(dtab)) and np.all(np.isfinite(stab))):
        raise ValueError("integrand is not finite on the table grid")
    return Integrand(xs[0], xs[1] - xs[0], dtab, stab, theta)


def integrate_paths(spec, x0, n_paths: int, dt: float, horizon: float, seed: int, key: tuple,
                    terms, theta: float = 0.0, snap_times=None, time_dependent: bool = False,
                    fused: bool | None = None, align: int | None = None, workers: int = 1,
                    integrand: Integrand | None = None) -> PathIntegrals:
    """Per-path ``int_0^{zeta ∧ t} exp(-theta s) sum_i fn_i(s, X_s) dA^{mu_i}_s`` at each snapshot ``t``.

    ``terms`` is a list of ``(measure, fn)``.  One-dimensional interval runs
    use the fused kernel with the integrand tabulated on a fine grid; other
    runs record the paths and integrate with numpy.  Both see the same
    random numbers.  A prebuilt ``integrand`` (from :func:`tabulate`) skips
    the tabulation when many start points share one integrand.
    """
    n_steps, dt = steps_for(horizon, dt)
    if snap_times is None:
        snap_times = [n_steps * dt]
    snap_times = np.asarray(snap_times, dtype=float)
    if integrand is None:
        for m, _ in terms:
            validate_measure(m, spec.domain)
    if fused is None:
        fused = fused_supported(spec)
    if fused:
        if integrand is None and terms:
            integrand = tabulate(spec, terms, dt, n_steps, theta, time_dependent, align=align)
        if integrand is None:
            integrand = Integrand(0.0, 1.0, np.zeros((1, 2)), np.zeros((1, 2)))
        lif, vals, xs = [], [], []
        for b in iter_bundles(spec, x0, n_paths, dt, horizon, seed, key=key, record=False,
                              integrand=integrand, snap_times=snap_times, workers=workers):
            lif.append(b.lifetime)
            vals.append(b.snap_int)
            xs.append(b.snap_x)
        return PathIntegrals(snap_times, np.concatenate(vals), np.concatenate(xs), np.concatenate(lif),
                             {"mode": "fused", "table_cells": integrand.dtab.shape[1] - 1})
    lif, vals, xs = [], [], []
    for b in iter_bundles(spec, x0, n_paths, dt, horizon, seed, key=key, record=True, workers=workers):
        v = np.zeros((b.n_paths, len(snap_times)))
        x = np.empty((b.n_paths, len(snap_times), b.starts.shape[1]))
        for j, t in enumerate(snap_times):
            v[:, j] = af_integral(b, terms, t_cap=t, theta=theta)
            x[:, j] = b.state_at_step(int(round(t / dt)))[0]
        lif.append(b.lifetime)
        vals.append(v)
        xs.append(x)
    return PathIntegrals(snap_times, np.concatenate(vals), np.concatenate(xs), np.concatenate(lif),
                         {"mode": "recorded"})


def _one(t, x):
    return np.ones(len(x))


def af_samples(spec, measure, x0, t: float, n_paths: int, seed: int, key: tuple, dt: float = 1e-3,
               theta: float = 0.0) -> np.ndarray:
    """Samples of ``int_0^{t ∧ zeta} exp(-theta s) dA_s`` from ``x0``."""
    res = integrate_paths(spec, x0, n_paths, dt, t, seed, key, [(measure, _one)], theta=theta)
    return res.values[:, -1]


@dataclass
class RevuzRow:
    alpha: float
    estimate: MCEstimate
    mass: float


def revuz_check(spec, measure, alphas, n_paths: int, seed: int, dt: float = 1e-3,
                tail: float = 30.0) -> list[RevuzRow]:
    """``alpha * E_m int_0^inf exp(-alpha t) dA_t`` for each alpha, next to ``mu(E)``.

    Start points are drawn from the normalized Lebesgue measure on the domain
    and the average is rescaled by its volume.  Paths run for ``tail/alpha``
    time units, which leaves a discount of ``exp(-tail)``; the step is
    shrunk to at most ``0.1/alpha``.
    """
    dom = spec.domain
    if not dom.bounded:
        raise DomainError("revuz_check needs a bounded domain")
    mass = total_mass(measure, dom)
    vol = dom.volume()
    rows = []
    for a in alphas:
        a = float(a)
        if a <= 0:
            raise ValueError("alpha must be positive")
        step = min(dt, 0.1 / a)
        horizon = tail / a
        starts = np.concatenate([dom.sample_uniform(chunk_generator(seed, (5,), c), min(CHUNK, n_paths - c0))
                                 for c, c0 in enumerate(range(0, n_paths, CHUNK))])
        if is_zero(measure):
            vals = np.zeros(n_paths)
        else:
            vals = integrate_paths(spec, starts, n_paths, step, horizon, seed, (5, 1),
                                   [(measure, _one)], theta=a).values[:, -1]
        est = MCEstimate.from_samples(a * vol * vals, alpha=a, dt=step, horizon=horizon, seed=seed)
        rows.append(RevuzRow(a, est, mass))
    return rows


__all__ = [
    "LebesgueDensity", "SurfaceMeasure", "MollifiedPoint", "MeasureSum", "SmoothMeasure", "LEBESGUE", "ZERO",
    "components", "validate_measure", "total_mass", "evaluate_af", "weighted_af_integral", "AFPath",
    "af_total", "af_integral", "integrate_paths", "PathIntegrals", "tabulate", "revuz_check", "RevuzRow",
    "af_samples",
]
