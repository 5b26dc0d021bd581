"""Monte Carlo semigroups and potentials, with closed-form checks on an interval.

Killing at rate ``lambda`` (the process ``killing_rate``) always enters as the
deterministic weight ``exp(-lambda t)``; paths never depend on it, so an
estimate with ``lambda > 0`` is the ``lambda = 0`` estimate times that weight.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .domains import Box, Interval
from .grid import GridFunction
from .measures import LEBESGUE, components, integrate_paths, is_zero
from .process import MCEstimate, ReflectedBrownian, UnsupportedOperation, iter_bundles, steps_for

log = logging.getLogger(__name__)

# stream keys, one family per estimator
KEY_SEMIGROUP = 3
KEY_POTENTIAL = 4
KEY_RESOLVENT = 6


class DivergenceError(ValueError):
    """The requested potential is infinite (recurrent process without discount)."""


def _phi_values(phi, x):
    if phi is None:
        return np.zeros(len(x))
    if np.isscalar(phi):
        return np.full(len(x), float(phi))
    xs = x[:, 0] if x.shape[1] == 1 else x
    return np.broadcast_to(np.asarray(phi(xs), dtype=float), (len(x),))


def semigroup_samples(spec, phi, t_list, x, n_paths: int, dt: float = 1e-3, seed: int = 0,
                      key: tuple = (KEY_SEMIGROUP,), workers: int = 1) -> np.ndarray:
    """Samples of ``phi(X_t) 1{t < zeta}`` at each ``t`` (shape ``n_paths x len(t_list)``).

    All times share one set of paths; no killing weight is applied.
    """
    t_list = np.atleast_1d(np.asarray(t_list, dtype=float))
    if np.any(t_list < 0):
        raise ValueError("t must be >= 0")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros((n_paths, len(t_list)))
    pos = t_list > 0
    x_row = x.reshape(1, -1)
    out[:, ~pos] = _phi_values(phi, x_row)[0]
    if not pos.any():
        return out
    horizon = float(t_list[pos].max())
    n_steps, step = steps_for(horizon, dt)
    snaps = np.rint(t_list[pos] / step) * step
    order = np.argsort(snaps)
    snap_x = []
    for b in iter_bundles(spec, x_row, n_paths, step, horizon, seed, key=key, record=False,
                          snap_times=snaps[order], workers=workers):
        snap_x.append(b.snap_x)
    snap_x = np.concatenate(snap_x)
    cols = np.flatnonzero(pos)
    for jj, j in enumerate(order):
        xs = snap_x[:, jj]
        alive = ~np.isnan(xs[:, 0])
        vals = np.zeros(n_paths)
        if alive.any():
            vals[alive] = _phi_values(phi, xs[alive])
        out[:, cols[j]] = vals
    return out


def semigroup_apply(spec, phi, t, x, n_paths: int = 10_000, dt: float = 1e-3, seed: int = 0,
                    key: tuple = (KEY_SEMIGROUP,), workers: int = 1):
    """Estimate ``exp(-lambda t) E_x[phi(X_t); t < zeta]``.

    ``t`` may be a scalar (returns one MCEstimate) or a sequence (returns a
    list, all times estimated from the same paths).
    """
    scalar = np.ndim(t) == 0
    t_list = np.atleast_1d(np.asarray(t, dtype=float))
    samples = semigroup_samples(spec, phi, t_list, x, n_paths, dt, seed, key, workers)
    lam = spec.killing_rate
    out = []
    for j, tj in enumerate(t_list):
        est = MCEstimate.from_samples(samples[:, j], t=float(tj), dt=dt, seed=seed)
        if lam:
            est = est.scaled(math.exp(-lam * tj))
        est.meta["killing_rate"] = lam
        out.append(est)
    return out[0] if scalar else out


def _potential_numerics(theta, dt, horizon):
    """Shrink the step and horizon to the discount scale ``1/theta``."""
    if theta > 0:
        dt = min(dt, 0.1 / theta)
        horizon = min(horizon, 40.0 / theta)
    return dt, horizon


def potential_samples(spec, measure, weight_fn, alpha, x, n_paths, dt, horizon, seed, key, workers=1,
                      snap_times=None):
    """Per-path ``int_0^{zeta ∧ horizon} exp(-(alpha + lambda) t) weight_fn(X_t) dA_t`` and diagnostics."""
    theta = float(alpha) + spec.killing_rate
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if theta == 0 and not spec.killed and not is_zero(measure):
        raise DivergenceError("zero-rate potential of a conservative process diverges")
    dt, horizon = _potential_numerics(theta, dt, horizon)
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1)
    if is_zero(measure):
        n_snaps = 1 if snap_times is None else len(snap_times)
        return np.zeros((n_paths, n_snaps)), {"dt": dt, "horizon": horizon, "survivor_fraction": 0.0}
    if weight_fn is None:
        fn = _ones
    elif isinstance(weight_fn, GridFunction) or not _takes_time(weight_fn):
        wf = weight_fn

        def fn(t, xs):
            return wf(xs)
    else:
        fn = weight_fn
    res = integrate_paths(spec, x, n_paths, dt, horizon, seed, key, [(measure, fn)], theta=theta,
                          snap_times=snap_times, workers=workers)
    surv = float(np.mean(np.isinf(res.lifetime))) if spec.killed else 1.0
    meta = {"dt": dt, "horizon": horizon, "survivor_fraction": surv, "mode": res.meta.get("mode")}
    if theta == 0 and surv >= 0.01:
        meta["warning"] = "horizon leaves >= 1% of paths alive: zero-rate potential truncated"
        warnings.warn(meta["warning"], stacklevel=3)
    return res.values, meta


def _ones(t, x):
    return np.ones(len(x))


def _takes_time(fn) -> bool:
    return getattr(fn, "takes_time", False)


def potential(spec, measure, weight_fn=None, alpha: float = 0.0, x=0.5, n_paths: int = 10_000,
              dt: float = 1e-3, horizon: float = 5.0, seed: int = 0, key: tuple = (KEY_POTENTIAL,),
              workers: int = 1) -> MCEstimate:
    """Estimate ``E_x int_0^zeta exp(-(alpha + lambda) t) weight_fn(X_t) dA^mu_t``.

    For ``alpha + lambda > 0`` the step is capped at ``0.1/(alpha + lambda)``
    and the horizon at ``40/(alpha + lambda)``.  For a zero rate on a killed
    domain the horizon truncates the integral; the survivor fraction is kept
    in ``meta`` and a warning is raised above 1%.
    """
    vals, meta = potential_samples(spec, measure, weight_fn, alpha, x, n_paths, dt, horizon, seed, key, workers)
    return MCEstimate.from_samples(vals[:, -1], alpha=alpha, seed=seed, **meta)


def potential_grid(spec, measure, weight_fn, alpha, grid, n_paths, dt=1e-3, horizon=5.0, seed=0,
                   key=(KEY_POTENTIAL,), outside=0.0, workers=1) -> GridFunction:
    """Potential at every grid point (stream ``key + (i,)`` for point ``i``)."""
    means, ses = [], []
    for i, x in enumerate(grid):
        est = potential(spec, measure, weight_fn, alpha, x, n_paths, dt, horizon, seed, key + (i,), workers)
        means.append(est.mean)
        ses.append(est.std_error)
    return GridFunction(grid, means, ses, outside=outside, meta={"n_paths": n_paths, "alpha": alpha})


@dataclass
class ResidualReport:
    x_grid: np.ndarray
    residual: np.ndarray
    combined_se: np.ndarray
    budget: dict = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))

    def passes(self, k: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.residual) <= k * self.combined_se + 1e-15))


def resolvent_equation_residual(spec, measure, lam: float, x_grid, n_outer: int = 10_000,
                                n_inner: int = 4_000, inner_points: int = 41, dt: float = 1e-3,
                                horizon: float = 5.0, seed: int = 0) -> ResidualReport:
    """Residual of ``R_lam nu = R_1 nu + (1 - lam) R_lam(R_1 nu)`` on ``x_grid``.

    ``R_1 nu`` is first estimated on ``inner_points`` uniform nodes
    (``n_inner`` fresh paths each) and read by linear interpolation along the
    outer paths; ``R_lam nu``, ``R_1 nu`` and ``R_lam(R_1 nu)`` at each
    ``x`` share the same ``n_outer`` outer paths.  The combined standard
    error adds the outer errors and the inner error scaled by ``1/lam``.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    dom = spec.domain
    if not (isinstance(dom, Box) and dom.dim == 1):
        raise UnsupportedOperation("nested resolvent check is implemented on intervals")
    inner_grid = np.linspace(dom.lows[0], dom.highs[0], inner_points)
    outside = "clamp" if isinstance(spec, ReflectedBrownian) else 0.0
    psi = potential_grid(spec, measure, None, 1.0, inner_grid, n_inner, dt, horizon, seed,
                         key=(KEY_RESOLVENT, 1), outside=outside)
    inner_se = float(psi.std_error.max())
    res, cse = [], []
    for i, x in enumerate(np.atleast_1d(x_grid)):
        key = (KEY_RESOLVENT, 0, i)
        a = potential(spec, measure, None, lam, x, n_outer, dt, horizon, seed, key)
        b = potential(spec, measure, None, 1.0, x, n_outer, dt, horizon, seed, key)
        c = potential(spec, LEBESGUE, psi, lam, x, n_outer, dt, horizon, seed, key)
        r = a.mean - b.mean - (1.0 - lam) * c.mean
        se = a.std_error + b.std_error + abs(1.0 - lam) * (c.std_error + inner_se / lam)
        res.append(r)
        cse.append(se)
    return ResidualReport(np.atleast_1d(np.asarray(x_grid, dtype=float)), np.array(res), np.array(cse),
                          {"n_outer": n_outer, "n_inner": n_inner, "inner_points": inner_points, "dt": dt})


# ---------------------------------------------------------------------------
# closed forms for killed Brownian motion (generator ½Δ) on an interval

ORACLE_TOL = 1e-10


def _interval(domain):
    if not (isinstance(domain, Box) and domain.dim == 1):
        raise UnsupportedOperation("spectral oracle is defined on intervals only")
    return domain.lows[0], domain.highs[0]


def _green(a, b, alpha, x, y):
    lo, hi = np.minimum(x, y), np.maximum(x, y)
    if alpha == 0:
        return 2.0 * (lo - a) * (b - hi) / (b - a)
    k = math.sqrt(2.0 * alpha)
    return 2.0 * np.sinh(k * (lo - a)) * np.sinh(k * (b - hi)) / (k * math.sinh(k * (b - a)))


def green_function(domain, x, y, alpha: float = 0.0):
    """Green function of ``alpha - ½ d²/dx²`` with zero boundary values."""
    a, b = _interval(domain)
    return _green(a, b, alpha, np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def _n_modes(bound_fn, k_max=200_000):
    k = 1
    while bound_fn(k) > ORACLE_TOL:
        k *= 2
        if k > k_max:
            raise ValueError("eigen-sum does not reach the tail tolerance")
    return k


def spectral_oracle_interval(kind: str, domain, x, **kw) -> float:
    """Closed-form values for Brownian motion killed on leaving an interval.

    kinds
        ``semigroup`` (``phi``, ``t``): eigen-sum of ``E_x phi(X_t); t < zeta``.
        ``potential`` (``beta`` constant or callable, ``alpha`` >= 0): Green-function quadrature.
        ``survival`` (``t``): ``P_x(zeta > t)``.
        ``survival_integral`` (``n``, ``m``): ``int_n^m P_x(zeta > t) dt``.
        ``laplace_exit`` (``alpha``): ``E_x exp(-alpha zeta)``.
        ``mean_exit``: ``E_x zeta``.
    Eigen-sums are truncated once a tail bound falls below 1e-10.
    """
    a, b = _interval(domain)
    L = b - a
    x = float(x)
    if not a <= x <= b:
        raise ValueError("x outside the interval")
    y = x - a
    lam = lambda k: 0.5 * (k * math.pi / L) ** 2  # noqa: E731
    if kind == "mean_exit":
        return y * (L - y)
    if kind == "laplace_exit":
        alpha = float(kw["alpha"])
        if alpha == 0:
            return 1.0
        k = math.sqrt(2 * alpha)
        return math.cosh(k * (x - 0.5 * (a + b))) / math.cosh(0.5 * k * L)
    if kind == "survival":
        t = float(kw["t"])
        if t == 0:
            return 1.0 if a < x < b else 0.0
        K = _n_modes(lambda k: 4 / math.pi * math.exp(-lam(k) * t) / (1 - math.exp(-lam(1) * t)))
        ks = np.arange(1, K + 1, 2)
        return float(np.sum(4 / (ks * math.pi) * np.sin(ks * math.pi * y / L) * np.exp(-lam(ks) * t)))
    if kind == "survival_integral":
        n, m = float(kw["n"]), float(kw.get("m", math.inf))
        if m < n:
            raise ValueError("need n <= m")
        if n == 0:
            return y * (L - y) - spectral_oracle_interval("survival_integral", domain, x, n=m, m=math.inf) \
                if m > 0 else 0.0
        if m == n:
            return 0.0
        K = _n_modes(lambda k: 4 / math.pi / lam(1) * math.exp(-lam(k) * n) / (1 - math.exp(-lam(1) * n)))
        ks = np.arange(1, K + 1, 2)
        em = np.exp(-lam(ks) * m) if math.isfinite(m) else 0.0
        return float(np.sum(4 / (ks * math.pi) * np.sin(ks * math.pi * y / L) / lam(ks)
                            * (np.exp(-lam(ks) * n) - em)))
    if kind == "semigroup":
        phi, t = kw["phi"], float(kw["t"])
        if t == 0:
            return float(phi(np.array([x]))[0]) if callable(phi) else float(phi)
        f = (lambda s: float(phi(np.array([a + s]))[0])) if callable(phi) else (lambda s: float(phi))
        M = max(abs(f(s)) for s in np.linspace(0, L, 201))
        K = _n_modes(lambda k: 2 * M * math.exp(-lam(k) * t) / (1 - math.exp(-lam(1) * t)))
        total = 0.0
        for k in range(1, K + 1):
            ck = 2 / L * integrate.quad(f, 0, L, weight="sin", wvar=k * math.pi / L, limit=200)[0]
            total += ck * math.sin(k * math.pi * y / L) * math.exp(-lam(k) * t)
        return total
    if kind == "potential":
        beta, alpha = kw.get("beta", 1.0), float(kw.get("alpha", 0.0))
        if not callable(beta):
            c = float(beta)
            if alpha == 0:
                return c * y * (L - y)
            return c / alpha * (1 - spectral_oracle_interval("laplace_exit", domain, x, alpha=alpha))
        g = lambda s: float(_green(a, b, alpha, x, s) * beta(np.array([s]))[0])  # noqa: E731
        return float(integrate.quad(g, a, b, points=[x], limit=400, epsabs=ORACLE_TOL)[0])
    raise ValueError(f"unknown oracle kind {kind!r}")


__all__ = [
    "MCEstimate", "semigroup_apply", "semigroup_samples", "potential", "potential_grid", "potential_samples",
    "resolvent_equation_residual", "ResidualReport", "spectral_oracle_interval", "green_function",
    "DivergenceError",
]
