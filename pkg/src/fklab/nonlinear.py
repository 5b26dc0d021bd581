"""Fixed-point solvers for the semilinear parabolic and elliptic problems.

The parabolic problem ``u_t - L u + lambda u = f(x, u) + g(x, u) mu`` is
solved forward in time by dynamic programming over slices of width
``Delta``.  For each grid point ``x``

    u(t_{k+1}, x) = E_x[ exp(-lambda Delta) u(t_k, X_Delta) 1{Delta < zeta}
                         + int_0^{Delta ∧ zeta} exp(-lambda s) (f(X_s, ũ) ds + g(X_s, ũ) dA_s) ]

where ``ũ`` reads the previous slice (first sweep) and then the
time-linear mix of the fresh and previous slices (refinement sweeps).
The elliptic problem is solved by Picard iteration on the truncated
representation.  Every sweep reuses the paths of the previous one.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .domains import Box
from .grid import GridFunction, uniform_grid
from .measures import (LEBESGUE, ZERO, PathIntegrals, components, has_surface_part, integrate_paths,
                       tabulate, table_grid, validate_measure)
from .process import MCEstimate, ReflectedBrownian, UnsupportedOperation, steps_for

log = logging.getLogger(__name__)

KEY_PARABOLIC = 10
KEY_ELLIPTIC = 11
KEY_TRUNCATION = 12
KEY_APRIORI = 13


class ProblemRejected(ValueError):
    """Coefficients fail the sampled monotonicity or consistency checks."""


class ConvergenceError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(f"{msg}; trace={trace}")
        self.trace = trace


def clamp(y, c):
    """Truncation ``((-c) ∨ y) ∧ c``."""
    if c < 0:
        raise ValueError("c must be >= 0")
    return np.minimum(np.maximum(y, -c), c) if np.ndim(y) else min(max(y, -c), c)


def _ev(fn, x, y):
    x = np.asarray(x, dtype=float)
    n = len(x)
    if fn is None:
        return np.zeros(n)
    return np.broadcast_to(np.asarray(fn(x, y), dtype=float), (n,))


@dataclass(frozen=True)
class Coefficients:
    """Data ``f(x, y)``, ``g(x, y)``, initial value ``phi`` and killing rate ``lam``.

    ``alpha_mono`` is the one-sided Lipschitz constant of ``f`` in ``y``;
    ``g`` must be nonincreasing in ``y``.  ``None`` stands for zero.
    """

    f: Callable | None = None
    g: Callable | None = None
    phi: Callable | float | None = None
    alpha_mono: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not math.isfinite(self.alpha_mono):
            raise ValueError("alpha_mono must be finite")

    def f_at(self, x, y):
        return _ev(self.f, x, y)

    def g_at(self, x, y):
        return _ev(self.g, x, y)

    def phi_at(self, x):
        x = np.asarray(x, dtype=float)
        if self.phi is None:
            return np.zeros(len(x))
        if np.isscalar(self.phi):
            return np.full(len(x), float(self.phi))
        return np.broadcast_to(np.asarray(self.phi(x), dtype=float), (len(x),))


PROBE_Y = np.linspace(-3.0, 3.0, 13)


def _probe_x(domain, n=33):
    if isinstance(domain, Box) and domain.dim == 1:
        return np.linspace(domain.lows[0], domain.highs[0], n)
    raise UnsupportedOperation("solvers are implemented on intervals")


def sampled_monotonicity(fn, domain, y_probe=PROBE_Y) -> float:
    """Largest ``(fn(x,y) - fn(x,y'))(y - y') / |y - y'|^2`` over probe pairs."""
    if fn is None:
        return 0.0
    xs = _probe_x(domain)
    worst = -math.inf
    for i, y1 in enumerate(y_probe):
        for y2 in y_probe[i + 1:]:
            d = (_ev(fn, xs, np.full(len(xs), y1)) - _ev(fn, xs, np.full(len(xs), y2))) * (y1 - y2)
            worst = max(worst, float(np.max(d)) / (y1 - y2) ** 2)
    return worst


def depends_on_y(fn, domain) -> bool:
    if fn is None:
        return False
    xs = _probe_x(domain)
    base = _ev(fn, xs, np.zeros(len(xs)))
    return any(not np.array_equal(base, _ev(fn, xs, np.full(len(xs), y))) for y in PROBE_Y)


def check_coefficients(coeffs: Coefficients, domain, tol: float = 1e-9) -> None:
    """Reject data that violate the sampled monotonicity conditions."""
    a_f = sampled_monotonicity(coeffs.f, domain)
    if a_f > coeffs.alpha_mono + tol * max(1.0, abs(coeffs.alpha_mono)):
        raise ProblemRejected(f"f has sampled monotonicity constant {a_f:.4g} > alpha_mono={coeffs.alpha_mono}")
    a_g = sampled_monotonicity(coeffs.g, domain)
    if a_g > tol:
        raise ProblemRejected(f"g is not nonincreasing in y (sampled constant {a_g:.4g})")
    xs = _probe_x(domain)
    for name, fn in (("f", coeffs.f), ("g", coeffs.g)):
        for y in PROBE_Y:
            if not np.all(np.isfinite(_ev(fn, xs, np.full(len(xs), y)))):
                raise ProblemRejected(f"{name} is not finite on the probe grid")


@dataclass(frozen=True)
class Normalization:
    """Change of unknown ``û(t, x) = exp(-a t) u(t, x)`` making the driver dissipative.

    With ``a = alpha_mono > 0`` the driver becomes
    ``f̂(t, x, y) = exp(-a t) f(x, exp(a t) y) - a y`` and similarly
    ``ĝ(t, x, y) = exp(-a t) g(x, exp(a t) y)``; with ``a <= 0`` it is the identity.
    """

    a: float
    coeffs: Coefficients

    @property
    def active(self) -> bool:
        return self.a > 0

    def f(self, t, x, y):
        if not self.active:
            return self.coeffs.f_at(x, y)
        e = np.exp(self.a * np.asarray(t, dtype=float))
        return self.coeffs.f_at(x, e * y) / e - self.a * y

    def g(self, t, x, y):
        if not self.active:
            return self.coeffs.g_at(x, y)
        e = np.exp(self.a * np.asarray(t, dtype=float))
        return self.coeffs.g_at(x, e * y) / e

    def weight(self, t) -> float:
        """``u = weight(t) * û``."""
        return math.exp(self.a * t) if self.active else 1.0


def normalize_monotone(coeffs: Coefficients) -> Normalization:
    return Normalization(max(coeffs.alpha_mono, 0.0), coeffs)


@dataclass(frozen=True)
class ProblemSpec:
    """Domain, process, coefficients and measure of one semilinear problem."""

    domain: object
    process: object
    coefficients: Coefficients
    measure: object = ZERO

    def __post_init__(self):
        if self.process.domain != self.domain:
            raise ProblemRejected("process and problem domains differ")
        if abs(self.process.killing_rate - self.coefficients.lam) > 0:
            raise ProblemRejected("process killing rate and coefficient lam differ")
        if has_surface_part(self.measure) and not isinstance(self.process, ReflectedBrownian):
            raise ProblemRejected("surface measures pair with the reflected process")
        validate_measure(self.measure, self.domain)

    @property
    def outside(self):
        return "clamp" if isinstance(self.process, ReflectedBrownian) else 0.0

    def with_killing(self, lam: float) -> "ProblemSpec":
        return ProblemSpec(self.domain, replace(self.process, killing_rate=lam),
                           replace(self.coefficients, lam=lam), self.measure)


@dataclass
class MCParams:
    n_paths: int = 10_000
    dt: float = 1e-3
    horizon: float = 5.0
    delta: float = 0.05
    sweeps: int = 2
    tol: float = 1e-3
    j_max: int = 50
    workers: int = 1


def default_grid(problem: ProblemSpec, n_points: int = 21) -> np.ndarray:
    dom = problem.domain
    if not (isinstance(dom, Box) and dom.dim == 1):
        raise UnsupportedOperation("grid solvers are implemented on intervals")
    return uniform_grid(dom.lows[0], dom.highs[0], n_points)


def _grid_or_default(problem, grid):
    if grid is None:
        return default_grid(problem)
    if np.isscalar(grid):
        return default_grid(problem, int(grid))
    return np.asarray(grid, dtype=float)


def _align(grid):
    """Coarse cell count when the grid is uniform over the domain, for table alignment."""
    h = np.diff(grid)
    return len(h) if np.allclose(h, h[0]) else None


def _start_killed(problem, x) -> bool:
    return problem.process.killed and not problem.domain.contains(np.array([[x]]))[0]


def _terms(problem, norm: Normalization, read, t_of):
    """Integrand terms ``f̂(t, x, ũ) dt + ĝ(t, x, ũ) dA``; ``read(s, x)`` and ``t_of(s)`` use path time."""
    terms = []
    co = problem.coefficients
    if co.f is not None:
        terms.append((LEBESGUE, lambda s, x: norm.f(t_of(s), x, read(s, x))))
    if co.g is not None and components(problem.measure):
        terms.append((problem.measure, lambda s, x: norm.g(t_of(s), x, read(s, x))))
    return terms


def _slice_values(problem, grid, n_paths, dt, horizon, seed, key_fn, terms, end_fn, time_dependent,
                  workers, keep_samples=False, snap_times=None):
    """Run every grid point and return means/SE of ``integral + end_fn(X_T, alive)`` per snapshot."""
    lam = problem.coefficients.lam
    n_steps, dt = steps_for(horizon, dt)
    snap_times = [n_steps * dt] if snap_times is None else snap_times
    integrand = None
    if terms:
        integrand = tabulate(problem.process, terms, dt, n_steps, lam, time_dependent, align=_align(grid))
    means = np.zeros((len(snap_times), len(grid)))
    ses = np.zeros_like(means)
    samples = {}
    for i, x in enumerate(grid):
        res = integrate_paths(problem.process, x, n_paths, dt, horizon, seed, key_fn(i), terms,
                              theta=lam, snap_times=snap_times, integrand=integrand, workers=workers)
        for j in range(len(snap_times)):
            vals = res.values[:, j] + end_fn(j, res, x)
            means[j, i] = vals.mean()
            ses[j, i] = vals.std(ddof=1) / math.sqrt(len(vals))
            if keep_samples:
                samples[(j, i)] = vals
    return means, ses, samples


def solve_parabolic(problem: ProblemSpec, T: float, n_time: int, grid=None, mc: MCParams | None = None,
                    seed: int = 0) -> GridFunction:
    """``u(t_k, x)`` on ``t_k = k T / n_time`` and the spatial grid.

    Returns a time-space GridFunction; ``meta["sweep_changes"]`` holds the
    sup-change of each refinement sweep per slice.
    """
    mc = mc or MCParams()
    if T <= 0 or n_time < 1:
        raise ValueError("need T > 0 and n_time >= 1")
    co = problem.coefficients
    check_coefficients(co, problem.domain)
    norm = normalize_monotone(co)
    grid = _grid_or_default(problem, grid)
    delta = T / n_time
    n_steps, step = steps_for(delta, mc.dt)
    lam = co.lam
    outside = problem.outside
    times = np.linspace(0.0, T, n_time + 1)
    u = np.zeros((n_time + 1, len(grid)))
    se = np.zeros_like(u)
    u[0] = co.phi_at(grid)
    degenerate = np.array([_start_killed(problem, x) for x in grid])
    changes = []

    def interp(vals, x):
        if outside == "clamp":
            return np.interp(x, grid, vals)
        return np.interp(x, grid, vals, left=0.0, right=0.0)

    for k in range(n_time):
        t_next = times[k + 1]
        prev = u[k] / norm.weight(times[k]) if norm.active else u[k]
        prev_se = se[k]
        new = None
        slice_changes = []
        for sweep in range(max(1, mc.sweeps)):
            if sweep == 0:
                def read(s, x, prev=prev):
                    return interp(prev, x)
            else:
                def read(s, x, prev=prev, new=new):
                    w = np.asarray(s, dtype=float) / delta
                    return (1.0 - w) * interp(new, x) + w * interp(prev, x)

            def t_of(s, t_next=t_next):
                return t_next - np.asarray(s, dtype=float)

            terms = _terms(problem, norm, read, t_of)

            def end_fn(j, res, x, prev=prev, prev_se=prev_se):
                xe = res.snap_x[:, j, 0]
                alive = ~np.isnan(xe)
                out = np.zeros(res.n_paths)
                out[alive] = math.exp(-lam * delta) * interp(prev, xe[alive])
                return out

            td = sweep > 0 or norm.active
            means, ses, _ = _slice_values(problem, grid, mc.n_paths, step, delta, seed,
                                          lambda i, k=k: (KEY_PARABOLIC, k, i), terms, end_fn, td, mc.workers)
            vals = means[0]
            if new is not None:
                slice_changes.append(float(np.max(np.abs(vals - new))))
            new = vals
            mc_se = ses[0]
        # propagated error: average of the previous SE over the end point law (upper bound)
        prop = np.array([math.exp(-lam * delta) * prev_se.max() for _ in grid]) if prev_se.any() else 0.0
        u_hat = new
        u[k + 1] = u_hat * norm.weight(t_next) if norm.active else u_hat
        se[k + 1] = np.sqrt(mc_se ** 2 + prop ** 2) * (norm.weight(t_next) if norm.active else 1.0)
        # paths started on the boundary of a killed domain have zeta = 0 and carry phi(x0)
        u[k + 1, degenerate] = co.phi_at(grid[degenerate])
        se[k + 1, degenerate] = 0.0
        changes.append(slice_changes)
        if slice_changes:
            log.debug("slice %d sweep changes %s", k, slice_changes)
    meta = {"n_paths": mc.n_paths, "dt": step, "delta": delta, "sweeps": mc.sweeps, "seed": seed,
            "sweep_changes": changes, "normalization": norm.a}
    return GridFunction(grid, u, se, times, outside, meta)


@dataclass
class EllipticResult:
    solution: GridFunction
    trace: list
    samples: dict = field(default_factory=dict)


def solve_elliptic(problem: ProblemSpec, horizon_n: float | None = None, grid=None, mc: MCParams | None = None,
                   seed: int = 0, terminal: bool = False, sim_horizon: float | None = None,
                   keep_samples: bool = False, key: tuple = (KEY_ELLIPTIC,)) -> GridFunction:
    """Picard iteration ``v <- E_x int_0^{zeta ∧ n} exp(-lambda t)(f(X, v) dt + g(X, v) dA)``.

    Starts from ``v = 0`` and stops when the sup change is at most
    ``max(tol, 3 * median SE)``.  When neither f nor g depends on ``y`` the
    second sweep would repeat the first bit for bit (same paths), so it is
    recorded as a zero change without being run.  With ``terminal`` the
    truncated problem also carries ``exp(-lambda n) phi(X_n) 1{n < zeta}``.
    Paths are simulated to ``sim_horizon`` (default ``horizon_n``) so runs
    with different ``n`` can share them.
    """
    return _solve_elliptic(problem, horizon_n, grid, mc, seed, terminal, sim_horizon, keep_samples, key).solution


def _solve_elliptic(problem, horizon_n, grid, mc, seed, terminal=False, sim_horizon=None, keep_samples=False,
                    key=(KEY_ELLIPTIC,)) -> EllipticResult:
    mc = mc or MCParams()
    co = problem.coefficients
    check_coefficients(co, problem.domain)
    if co.alpha_mono > co.lam:
        raise ProblemRejected("elliptic solve needs alpha_mono <= lam")
    if not problem.process.killed and co.lam == 0 and (co.f is not None or components(problem.measure)):
        raise ProblemRejected("conservative process without killing: the elliptic potential diverges")
    horizon_n = mc.horizon if horizon_n is None else horizon_n
    sim_horizon = horizon_n if sim_horizon is None else sim_horizon
    if sim_horizon < horizon_n:
        raise ValueError("sim_horizon must cover horizon_n")
    grid = _grid_or_default(problem, grid)
    outside = problem.outside
    lam = co.lam
    norm = Normalization(0.0, co)
    n_steps, step = steps_for(sim_horizon, mc.dt)
    snap = [round(horizon_n / step) * step]
    linear = not (depends_on_y(co.f, problem.domain) or depends_on_y(co.g, problem.domain))
    v = np.zeros(len(grid))
    trace = []
    samples = {}
    converged = False

    def end_fn(j, res, x):
        if not terminal or co.phi is None:
            return np.zeros(res.n_paths)
        xe = res.snap_x[:, j, 0]
        alive = ~np.isnan(xe)
        out = np.zeros(res.n_paths)
        out[alive] = math.exp(-lam * snap[0]) * co.phi_at(xe[alive])
        return out

    for j in range(mc.j_max):
        def read(s, x, v=v):
            if outside == "clamp":
                return np.interp(x, grid, v)
            return np.interp(x, grid, v, left=0.0, right=0.0)

        terms = _terms(problem, norm, read, lambda s: 0.0)
        means, ses, samples = _slice_values(problem, grid, mc.n_paths, step, sim_horizon, seed,
                                            lambda i: key + (i,), terms, end_fn, False, mc.workers,
                                            keep_samples=keep_samples, snap_times=snap)
        new = means[0]
        new_se = ses[0]
        change = float(np.max(np.abs(new - v)))
        trace.append(change)
        v = new
        tol = max(mc.tol, 3.0 * float(np.median(new_se)))
        if linear:
            trace.append(0.0)
            converged = True
            break
        if j > 0 and change <= tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"Picard iteration did not converge in {mc.j_max} sweeps", trace)
    meta = {"trace": trace, "n_paths": mc.n_paths, "dt": step, "horizon_n": horizon_n, "seed": seed,
            "linear_shortcut": linear}
    return EllipticResult(GridFunction(grid, v, new_se, None, outside, meta), trace,
                          {i: samples[(0, i)] for i in range(len(grid))} if keep_samples else {})


@dataclass
class InequalityReport:
    """Pointwise ``lhs <= rhs + k * se`` with its margins."""

    x: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    se: np.ndarray
    k: float = 3.0
    meta: dict = field(default_factory=dict)

    @property
    def passes(self) -> np.ndarray:
        return self.lhs <= self.rhs + self.k * self.se

    @property
    def ok(self) -> bool:
        return bool(np.all(self.passes))

    @property
    def margin(self) -> np.ndarray:
        return self.rhs + self.k * self.se - self.lhs


def _abs0(fn):
    if fn is None:
        return None
    return lambda x, y: np.abs(_ev(fn, x, np.zeros(len(np.atleast_1d(x)))))


def truncation_gap(problem: ProblemSpec, n: float, m: float, grid=None, mc: MCParams | None = None,
                   seed: int = 0, rhs_paths: int | None = None) -> InequalityReport:
    """Compare ``sup |v_m - v_n|`` with the tail bound of the truncated problems.

    ``v_n`` and ``v_m`` are the truncated elliptic solutions (terminal value
    ``phi``) computed from the same paths, simulated to ``m``.  The right
    side is ``E_x[1{zeta>m}|phi(X_m)| + 1{zeta>n}|phi(X_n)| + int_{n∧zeta}^{m∧zeta}
    (|f(X,0)| dt + |g(X,0)| dA)]`` with the killing weight applied throughout.
    It may use more paths (``rhs_paths``); the first ``n_paths`` of them are
    the ones behind the left side.
    """
    mc = mc or MCParams()
    if n > m:
        raise ValueError("need n <= m")
    grid = _grid_or_default(problem, grid)
    co = problem.coefficients
    key = (KEY_TRUNCATION,)
    if n == m:
        z = np.zeros(len(grid))
        return InequalityReport(grid, z, z, z)
    rn = _solve_elliptic(problem, n, grid, mc, seed, terminal=True, sim_horizon=m, keep_samples=True, key=key)
    rm = _solve_elliptic(problem, m, grid, mc, seed, terminal=True, sim_horizon=m, keep_samples=True, key=key)
    lhs = np.abs(rm.solution.values - rn.solution.values)
    lhs_se = np.array([rm.samples[i].__sub__(rn.samples[i]).std(ddof=1) / math.sqrt(mc.n_paths)
                       for i in range(len(grid))])
    # right side from the same paths: integrals at snapshots n and m
    lam = co.lam
    terms = []
    if co.f is not None:
        terms.append((LEBESGUE, lambda s, x: np.abs(co.f_at(x, np.zeros(len(x))))))
    if co.g is not None and components(problem.measure):
        terms.append((problem.measure, lambda s, x: np.abs(co.g_at(x, np.zeros(len(x))))))
    n_steps, step = steps_for(m, mc.dt)
    snaps = [round(n / step) * step, n_steps * step]
    rhs, rhs_se = np.zeros(len(grid)), np.zeros(len(grid))
    for i, x in enumerate(grid):
        res = integrate_paths(problem.process, x, rhs_paths or mc.n_paths, step, m, seed, key + (i,), terms,
                              theta=lam, snap_times=snaps, workers=mc.workers)
        vals = res.values[:, 1] - res.values[:, 0]
        for j, t in enumerate(snaps):
            xe = res.snap_x[:, j, 0]
            alive = ~np.isnan(xe)
            vals[alive] += math.exp(-lam * t) * np.abs(co.phi_at(xe[alive]))
        rhs[i] = vals.mean()
        rhs_se[i] = vals.std(ddof=1) / math.sqrt(len(vals))
    return InequalityReport(grid, lhs, rhs, lhs_se + rhs_se,
                            meta={"n": n, "m": m, "lhs_se": lhs_se, "rhs_se": rhs_se, "dt": step,
                                  "n_paths": mc.n_paths, "rhs_paths": rhs_paths or mc.n_paths, "trace_n": rn.trace, "trace_m": rm.trace})


def time_space_reader(u: GridFunction, T: float):
    """``read(s, x) = u(T - s, x)``: linear in time between slices, linear in space."""
    times = u.times
    grid = u.grid
    outside = u.outside

    def sp(vals, x):
        if outside == "clamp":
            return np.interp(x, grid, vals)
        return np.interp(x, grid, vals, left=0.0, right=0.0)

    def read(s, x):
        t = np.clip(T - np.asarray(s, dtype=float), times[0], times[-1])
        if np.ndim(t) == 0:
            j = min(int(np.searchsorted(times, t, side="right")) - 1, len(times) - 2)
            w = (t - times[j]) / (times[j + 1] - times[j])
            return (1 - w) * sp(u.values[j], x) + w * sp(u.values[j + 1], x)
        # row-wise evaluation (recorded mode)
        j = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2)
        w = (t - times[j]) / (times[j + 1] - times[j])
        out = np.empty(len(x))
        for jj in np.unique(j):
            sel = j == jj
            out[sel] = (1 - w[sel]) * sp(u.values[jj], x[sel]) + w[sel] * sp(u.values[jj + 1], x[sel])
        return out

    return read


def apriori_check(problem: ProblemSpec, T: float, u: GridFunction, grid=None, mc: MCParams | None = None,
                  seed: int = 0) -> InequalityReport:
    """A priori bound for the solved ``u`` at time ``T``.

    lhs = ``E_x[int_0^{T∧zeta} |f(X, u)| dt + |g(X, u)| dA]`` with ``u`` read at
    ``T - t``; rhs = ``E_x[|phi(X_T)| 1{T<zeta} + 2 int |f(X,0)| dt + 3 int |g(X,0)| dA]``.
    Both come from the same paths; the slack is three standard errors of
    their difference.
    """
    mc = mc or MCParams()
    co = problem.coefficients
    grid = u.grid if grid is None else np.asarray(grid, dtype=float)
    if u.times is None or T > u.times[-1] + 1e-12:
        raise ValueError("u must be a time-space solution covering T")
    read = time_space_reader(u, T)
    lam = co.lam
    zero = lambda x: np.zeros(len(x))  # noqa: E731
    lhs_terms, rhs_terms = [], []
    if co.f is not None:
        lhs_terms.append((LEBESGUE, lambda s, x: np.abs(co.f_at(x, read(s, x)))))
        rhs_terms.append((LEBESGUE, lambda s, x: 2.0 * np.abs(co.f_at(x, zero(x)))))
    if co.g is not None and components(problem.measure):
        lhs_terms.append((problem.measure, lambda s, x: np.abs(co.g_at(x, read(s, x)))))
        rhs_terms.append((problem.measure, lambda s, x: 3.0 * np.abs(co.g_at(x, zero(x)))))
    key = (KEY_APRIORI,)
    lhs, rhs, se = (np.zeros(len(grid)) for _ in range(3))
    for i, x in enumerate(grid):
        a = integrate_paths(problem.process, x, mc.n_paths, mc.dt, T, seed, key + (i,), lhs_terms, theta=lam,
                            time_dependent=True, workers=mc.workers)
        b = integrate_paths(problem.process, x, mc.n_paths, mc.dt, T, seed, key + (i,), rhs_terms, theta=lam,
                            workers=mc.workers)
        xe = b.snap_x[:, -1, 0]
        alive = ~np.isnan(xe)
        end = np.zeros(b.n_paths)
        end[alive] = math.exp(-lam * T) * np.abs(co.phi_at(xe[alive]))
        if _start_killed(problem, x):
            end[:] = abs(co.phi_at(np.array([x]))[0])
        lv = a.values[:, -1]
        rv = b.values[:, -1] + end
        lhs[i], rhs[i] = lv.mean(), rv.mean()
        se[i] = (rv - lv).std(ddof=1) / math.sqrt(len(lv))
    return InequalityReport(grid, lhs, rhs, se, meta={"T": T, "n_paths": mc.n_paths, "dt": mc.dt})


__all__ = [
    "Coefficients", "ProblemSpec", "MCParams", "Normalization", "normalize_monotone", "clamp",
    "check_coefficients", "sampled_monotonicity", "solve_parabolic", "solve_elliptic", "truncation_gap",
    "apriori_check", "InequalityReport", "ProblemRejected", "ConvergenceError", "default_grid",
    "time_space_reader",
]
