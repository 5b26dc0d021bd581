"""Simulation of killed and reflected Brownian motion and killed stable processes.

All randomness flows through :func:`chunk_generator`: paths are grouped into
fixed chunks of ``CHUNK`` consecutive path indices and each chunk draws from
its own ``SeedSequence(seed, spawn_key=key + (chunk,))``.  Path ``i`` of a run
therefore sees the same numbers no matter how the run is split across workers
or memory groups.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import _kernels as K
from .domains import Ball, Box, DomainError, FullSpace, Interval

log = logging.getLogger(__name__)

CHUNK = 1024
DEFAULT_DT = 1e-3


class UnsupportedOperation(ValueError):
    """The requested operation is not defined for this process or measure."""


@dataclass(frozen=True)
class KilledBrownian:
    """Brownian motion with generator ½Δ killed on leaving ``domain``."""

    domain: Box | Ball | FullSpace
    killing_rate: float = 0.0

    def __post_init__(self):
        if self.killing_rate < 0:
            raise ValueError("killing_rate must be >= 0")

    @property
    def killed(self) -> bool:
        return self.domain.bounded


@dataclass(frozen=True)
class ReflectedBrownian:
    """Brownian motion with generator ½Δ reflected on the boundary of a box."""

    domain: Box
    killing_rate: float = 0.0

    def __post_init__(self):
        if not isinstance(self.domain, Box):
            raise DomainError("reflection is implemented for intervals and boxes only")
        if self.killing_rate < 0:
            raise ValueError("killing_rate must be >= 0")

    @property
    def killed(self) -> bool:
        return False


@dataclass(frozen=True)
class KilledStable:
    """Symmetric stable process, E exp(i k X_t) = exp(-t |k|^alpha), killed outside ``domain``."""

    domain: Box | Ball | FullSpace
    alpha: float
    killing_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError(f"stable index must lie in (0, 2), got {self.alpha}")
        if self.killing_rate < 0:
            raise ValueError("killing_rate must be >= 0")
        if self.alpha > 1.95:
            warnings.warn("stable index close to 2: exit detection bias grows", stacklevel=2)

    @property
    def killed(self) -> bool:
        return self.domain.bounded


ProcessSpec = KilledBrownian | ReflectedBrownian | KilledStable


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0


@dataclass
class PathSample:
    """One trajectory.  ``lifetime`` is ``inf`` when the path survives the horizon."""

    times: np.ndarray
    states: np.ndarray
    lifetime: float
    horizon: float
    local_time: np.ndarray | None = None
    contact: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else math.nan


def chunk_generator(seed: int, key: tuple, chunk: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key) + (int(chunk),))
    return np.random.Generator(np.random.PCG64(ss))


def _kernel_params(spec):
    dom = spec.domain
    d = dom.dim
    lo = np.zeros(d)
    hi = np.zeros(d)
    center = np.zeros(d)
    radius = 0.0
    if isinstance(dom, Box):
        dom_code = K.DOM_BOX
        lo[:] = dom.lows
        hi[:] = dom.highs
    elif isinstance(dom, Ball):
        dom_code = K.DOM_BALL
        center[:] = dom.center
        radius = dom.radius
    else:
        dom_code = K.DOM_FULL
    if isinstance(spec, ReflectedBrownian):
        proc, alpha, nz, nu = K.PROC_REFLECTED_BM, 2.0, d, d
    elif isinstance(spec, KilledStable):
        proc, alpha, nz, nu = K.PROC_KILLED_STABLE, float(spec.alpha), (0 if d == 1 else d), 2
    else:
        proc, alpha, nz, nu = K.PROC_KILLED_BM, 2.0, d, 1
    return proc, dom_code, lo, hi, center, radius, alpha, nz, nu


def steps_for(horizon: float, dt: float) -> tuple[int, float]:
    """Number of steps covering ``horizon`` and the adjusted step size."""
    if not (dt > 0 and horizon > 0):
        raise ValueError("dt and horizon must be positive")
    n = max(1, int(round(horizon / dt)))
    return n, horizon / n


@dataclass
class PathBundle:
    """Many paths stored as one flat table of recorded states.

    Rows ``offsets[i]:offsets[i+1]`` of ``states`` belong to path ``i``; the
    ``j``-th row of a path sits at time ``j * dt``.  Killed paths only record
    states strictly before their lifetime.
    """

    dt: float
    n_steps: int
    starts: np.ndarray
    lifetime: np.ndarray
    final: np.ndarray
    offsets: np.ndarray | None = None
    states: np.ndarray | None = None
    local_time_inc: np.ndarray | None = None
    contact: np.ndarray | None = None
    first_path: int = 0
    snap_steps: np.ndarray | None = None
    snap_x: np.ndarray | None = None
    snap_int: np.ndarray | None = None
    _row_path: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_paths(self) -> int:
        return len(self.lifetime)

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps

    @property
    def alive_at_horizon(self) -> np.ndarray:
        return np.isinf(self.lifetime)

    @property
    def row_path(self) -> np.ndarray:
        if self._row_path is None:
            counts = np.diff(self.offsets)
            self._row_path = np.repeat(np.arange(self.n_paths), counts)
        return self._row_path

    @property
    def row_step(self) -> np.ndarray:
        return np.arange(len(self.states)) - self.offsets[self.row_path]

    def row_times(self) -> np.ndarray:
        return self.row_step * self.dt

    def time_weights(self, t_cap: float | None = None, theta: float = 0.0) -> np.ndarray:
        """Weights so that ``sum(w * F(states))`` integrates ``exp(-theta t) F(X_t)`` over ``[0, lifetime ∧ t_cap]``.

        Between grid times F is taken linear and the discount is integrated
        exactly (the trapezoid rule when ``theta == 0``); the half step
        before a kill uses F at its left end, so F ≡ 1, theta = 0 gives
        ``lifetime ∧ t_cap`` exactly.  ``t_cap`` must be a multiple of ``dt``.
        """
        dt = self.dt
        step = self.row_step
        path = self.row_path
        n_rec = np.diff(self.offsets)
        last = step == n_rec[path] - 1
        killed_last = last & np.isfinite(self.lifetime[path])
        w0, w1, wk = step_weights(theta, dt)
        disc = np.exp(-theta * dt * step) if theta else np.ones(len(step))
        disc_prev = disc * math.exp(theta * dt)
        has_next = ~last
        kc = None
        if t_cap is not None and t_cap < self.horizon:
            kc = int(round(t_cap / dt))
            if abs(kc * dt - t_cap) > 1e-9 * max(1.0, t_cap):
                raise ValueError("t_cap must be a multiple of dt")
            has_next &= step < kc
            killed_last &= step < kc
        w = np.where(step > 0, disc_prev * w1, 0.0)
        w = w + np.where(has_next, disc * w0, 0.0) + np.where(killed_last, disc * wk, 0.0)
        if kc is not None:
            w = np.where(step > kc, 0.0, w)
        return w

    def path(self, i: int) -> PathSample:
        if self.states is None:
            raise UnsupportedOperation("bundle was simulated without recording states")
        sl = slice(self.offsets[i], self.offsets[i + 1])
        st = self.states[sl]
        times = np.arange(len(st)) * self.dt
        lt = ct = None
        if self.local_time_inc is not None:
            lt = np.cumsum(self.local_time_inc[sl])
            ct = self.contact[sl]
        return PathSample(times, st, float(self.lifetime[i]), self.horizon, lt, ct)

    def sum_per_path(self, row_values: np.ndarray) -> np.ndarray:
        return np.bincount(self.row_path, weights=row_values, minlength=self.n_paths)

    def state_at_step(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Positions at step ``k`` and the mask of paths alive there."""
        n_rec = np.diff(self.offsets)
        alive = n_rec > k
        x = np.full((self.n_paths, self.starts.shape[1]), np.nan)
        x[alive] = self.states[self.offsets[:-1][alive] + k]
        return x, alive


def _check_start(spec, x0):
    dom = spec.domain
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    if x0.shape[1] != dom.dim:
        x0 = x0.reshape(-1, dom.dim)
    if not np.all(dom.closure_contains(x0)):
        raise DomainError(f"start point outside the closed domain: {x0[~dom.closure_contains(x0)][0]}")
    return x0


@dataclass
class Integrand:
    """A one-dimensional integrand tabulated for the fused path kernel.

    ``dtab[r, j]`` is the density part at grid node ``lo + j * hx`` and time
    step ``r`` (the last row is reused for later steps); ``stab[r, 0/1]`` is
    the weight of a local-time increment at the lower/upper wall.  Both are
    discounted by ``exp(-theta * t)``.
    """

    lo: float
    hx: float
    dtab: np.ndarray
    stab: np.ndarray
    theta: float = 0.0

    def __post_init__(self):
        self.dtab = np.ascontiguousarray(np.atleast_2d(self.dtab), dtype=float)
        self.stab = np.ascontiguousarray(np.atleast_2d(self.stab), dtype=float)
        if self.stab.shape[0] != self.dtab.shape[0]:
            self.stab = np.broadcast_to(self.stab, (self.dtab.shape[0], 2)).copy()


_EMPTY2 = np.zeros((1, 2))


def step_weights(theta: float, h: float) -> tuple[float, float, float]:
    """Weights of ``int_0^h exp(-theta s) F(s) ds`` for F linear between its end values.

    Returns ``(w0, w1, wk)`` where ``wk = int_0^{h/2} exp(-theta s) ds`` is
    used for the half step before a kill.
    """
    a = theta * h
    if a < 1e-4:
        w0 = h * (0.5 - a / 6 + a * a / 24)
        w1 = h * (0.5 - a / 3 + a * a / 8)
    else:
        em = math.expm1(-a)
        w0 = h * (a + em) / (a * a)
        w1 = h * (-em - a * (1 + em)) / (a * a)
    wk = 0.5 * h if theta == 0 else -math.expm1(-0.5 * a) / theta
    return w0, w1, wk


def _simulate_chunk(spec, starts, dt, n_steps, gen, record, integrand=None, snaps=None):
    proc, dom, lo, hi, center, radius, alpha, _, _ = _kernel_params(spec)
    n, d = starts.shape
    cap = max(16, min(n * (n_steps + 1), 1 << 20)) if record else 1
    states = np.empty((cap, d))
    dl = np.empty(cap)
    contact = np.empty((cap, d))
    offsets = np.zeros(n + 1, dtype=np.int64)
    lifetime = np.empty(n)
    final = np.empty((n, d))
    st = np.zeros(5, dtype=np.int64)
    cur = np.zeros(d)
    run = np.zeros(2)
    snaps = np.zeros(0, dtype=np.int64) if snaps is None else snaps
    snap_x = np.empty((n, len(snaps), d))
    snap_int = np.zeros((n, len(snaps)))
    if integrand is not None:
        acc, dtab, tlo, thx = True, integrand.dtab, integrand.lo, integrand.hx
        disc = np.exp(-integrand.theta * dt * np.arange(n_steps + 1))
        w0, w1, wk = step_weights(integrand.theta, dt)
        # local time accrues inside a step: discount it at the step midpoint
        stab = integrand.stab * math.exp(0.5 * integrand.theta * dt)
    else:
        acc, dtab, stab, tlo, thx, disc = False, _EMPTY2, _EMPTY2, 0.0, 1.0, np.ones(1)
        w0 = w1 = wk = 0.0
    while True:
        code = K.run_paths(proc, dom, lo, hi, center, radius, alpha, dt, n_steps,
                           starts, gen, record, st, cur, run,
                           states, dl, contact, offsets, lifetime, final,
                           acc, dtab, stab, tlo, thx, disc, w0, w1, wk, snaps, snap_x, snap_int)
        if code == K.DONE:
            break
        grow = len(states)
        states = np.concatenate([states, np.empty((grow, d))])
        dl = np.concatenate([dl, np.empty(grow)])
        contact = np.concatenate([contact, np.empty((grow, d))])
    m = int(st[2])
    return lifetime, final, offsets, states[:m], dl[:m], contact[:m], snap_x, snap_int


def _snap_steps(snap_times, dt, n_steps):
    if snap_times is None:
        return None
    k = np.rint(np.asarray(snap_times, dtype=float) / dt).astype(np.int64)
    if np.any(np.abs(k * dt - np.asarray(snap_times)) > 1e-9 * np.maximum(1.0, snap_times)):
        raise ValueError("snapshot times must be multiples of dt")
    if np.any(np.diff(k) < 0) or k.min() < 0 or k.max() > n_steps:
        raise ValueError("snapshot times must be sorted and inside [0, horizon]")
    return k


def simulate_bundle(spec, x0, n_paths: int, dt: float, horizon: float, seed: int,
                    key: tuple = (), first_path: int = 0, record: bool = True,
                    integrand: Integrand | None = None, snap_times=None,
                    workers: int = 1) -> PathBundle:
    """Simulate paths ``first_path .. first_path + n_paths - 1`` of the run ``(seed, key)``.

    ``x0`` is one start point shared by all paths, or one row per path.
    ``first_path`` must be a multiple of ``CHUNK``.  With ``integrand`` the
    path integrals are accumulated on the fly (1D only) and reported at
    ``snap_times`` (default: the horizon).
    """
    if first_path % CHUNK:
        raise ValueError("first_path must be aligned to the chunk size")
    n_steps, dt = steps_for(horizon, dt)
    starts = _check_start(spec, x0)
    if len(starts) == 1:
        starts = np.repeat(starts, n_paths, axis=0)
    elif len(starts) != n_paths:
        raise ValueError("x0 must be one point or one point per path")
    if integrand is not None:
        if spec.domain.dim != 1:
            raise UnsupportedOperation("fused integration is implemented for one-dimensional states")
        if snap_times is None:
            snap_times = [n_steps * dt]
    snaps = _snap_steps(snap_times, dt, n_steps)

    def job(c0):
        sub = np.ascontiguousarray(starts[c0:c0 + CHUNK])
        gen = chunk_generator(seed, key, (first_path + c0) // CHUNK)
        return _simulate_chunk(spec, sub, dt, n_steps, gen, record, integrand, snaps)

    chunks = range(0, n_paths, CHUNK)
    if workers > 1 and len(chunks) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(job, chunks))
    else:
        parts = [job(c0) for c0 in chunks]
    lifetime = np.concatenate([p[0] for p in parts])
    final = np.concatenate([p[1] for p in parts])
    bundle = PathBundle(dt, n_steps, starts, lifetime, final, first_path=first_path)
    if snaps is not None:
        bundle.snap_steps = snaps
        bundle.snap_x = np.concatenate([p[6] for p in parts])
        bundle.snap_int = np.concatenate([p[7] for p in parts])
    if record:
        shift = 0
        offs = [np.zeros(1, dtype=np.int64)]
        for p in parts:
            offs.append(p[2][1:] + shift)
            shift += p[2][-1]
        bundle.offsets = np.concatenate(offs)
        bundle.states = np.concatenate([p[3] for p in parts])
        if isinstance(spec, ReflectedBrownian):
            bundle.local_time_inc = np.concatenate([p[4] for p in parts])
            bundle.contact = np.concatenate([p[5] for p in parts])
    return bundle


def iter_bundles(spec, x0, n_paths: int, dt: float, horizon: float, seed: int,
                 key: tuple = (), record: bool = True, max_rows: int = 4_000_000,
                 **kwargs) -> Iterator[PathBundle]:
    """Yield consecutive groups of a run, sized to keep memory bounded.

    Extra keyword arguments go to :func:`simulate_bundle`.
    """
    n_steps, _ = steps_for(horizon, dt)
    starts = _check_start(spec, x0)
    per_path = n_steps + 1 if record else 1
    if record and spec.killed:
        per_path = min(per_path, _expected_rows_hint(spec, dt))
    group = max(CHUNK, (max_rows // max(per_path, 1)) // CHUNK * CHUNK) if record else n_paths
    for g0 in range(0, n_paths, group):
        n = min(group, n_paths - g0)
        xs = starts if len(starts) == 1 else starts[g0:g0 + n]
        yield simulate_bundle(spec, xs, n, dt, horizon, seed, key, first_path=g0, record=record, **kwargs)


def _expected_rows_hint(spec, dt):
    dom = spec.domain
    if isinstance(dom, Box):
        w = min(np.subtract(dom.highs, dom.lows))
        return int(4 * (w / 2) ** 2 / dt) + 2
    if isinstance(dom, Ball):
        return int(4 * dom.radius ** 2 / dt) + 2
    return 1 << 30


def simulate(spec, x0, horizon: float, dt: float = DEFAULT_DT, rng: RngStream = RngStream(0)) -> PathSample:
    """Simulate the single path ``rng.stream_id`` of the run seeded by ``rng.seed``.

    The path is bit-identical to the same-index path of any batch run with the
    same seed, start point and step size.
    """
    first = rng.stream_id // CHUNK * CHUNK
    lane = rng.stream_id - first
    b = simulate_bundle(spec, x0, lane + 1, dt, horizon, rng.seed, first_path=first)
    return b.path(lane)


@dataclass
class MCEstimate:
    """Monte Carlo mean with its standard error."""

    mean: float
    std_error: float
    n_paths: int
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples, **meta) -> "MCEstimate":
        samples = np.asarray(samples, dtype=float)
        n = len(samples)
        if n < 2:
            raise ValueError("need at least two samples")
        return cls(float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(n)), n, meta)

    def scaled(self, c: float) -> "MCEstimate":
        return MCEstimate(self.mean * c, self.std_error * abs(c), self.n_paths, dict(self.meta))

    def __repr__(self):
        return f"MCEstimate({self.mean:.6g} ± {self.std_error:.2g}, n={self.n_paths})"


def estimate_mean_exit_time(spec, x0, n_paths: int, dt: float = DEFAULT_DT, horizon: float = 5.0,
                            seed: int = 0) -> MCEstimate:
    """Monte Carlo estimate of E_x ζ; survivors contribute the horizon."""
    if not spec.killed:
        raise UnsupportedOperation("mean exit time needs a killed process")
    zetas = []
    for b in iter_bundles(spec, x0, n_paths, dt, horizon, seed, key=(1,), record=False):
        zetas.append(b.lifetime)
    zeta = np.concatenate(zetas)
    survivors = np.isinf(zeta)
    frac = float(survivors.mean())
    zeta = np.where(survivors, horizon, zeta)
    est = MCEstimate.from_samples(zeta, dt=dt, horizon=horizon, seed=seed, survivor_fraction=frac)
    if frac >= 0.01:
        est.meta["warning"] = "survivor fraction >= 1%: estimate biased low"
        warnings.warn(est.meta["warning"], stacklevel=2)
    return est


def ks_critical_value(n: int, m: int, level: float = 0.01) -> float:
    """Asymptotic two-sample Kolmogorov-Smirnov critical value."""
    c = math.sqrt(-0.5 * math.log(level / 2))
    return c * math.sqrt((n + m) / (n * m))


def shift_law_check(spec, measure, x0, s: float, t: float, n_paths: int, seed: int,
                    dt: float = DEFAULT_DT) -> float:
    """KS statistic between A_t sampled from start time 0 and from start time ``s``.

    The engine is time-homogeneous, so a start at time ``s`` is simulated on
    the clock ``[s, s + t]`` with an independent stream; both samples must
    share one law.
    """
    from scipy.stats import ks_2samp

    from .measures import af_samples

    samples = [af_samples(spec, measure, x0, t, n_paths, seed, key=(2, i), dt=dt)
               for i, start_time in enumerate((0.0, s))]
    return float(ks_2samp(samples[0], samples[1]).statistic)


def dump_paths_csv(bundle: PathBundle, path, max_paths: int | None = None) -> None:
    """Write ``path_id, t, x_1..x_d, alive, local_time`` rows."""
    import csv

    n = bundle.n_paths if max_paths is None else min(max_paths, bundle.n_paths)
    d = bundle.starts.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "t"] + [f"x_{i + 1}" for i in range(d)] + ["alive", "local_time"])
        for i in range(n):
            ps = bundle.path(i)
            lt = ps.local_time if ps.local_time is not None else np.zeros(len(ps.times))
            for k, tk in enumerate(ps.times):
                w.writerow([bundle.first_path + i, repr(float(tk))] + [repr(float(v)) for v in ps.states[k]]
                           + [1, repr(float(lt[k]))])
            if math.isfinite(ps.lifetime):
                w.writerow([bundle.first_path + i, repr(ps.lifetime)] + [repr(float(v)) for v in ps.states[-1]]
                           + [0, repr(float(lt[-1]))])


__all__ = [
    "Ball", "Box", "FullSpace", "Interval", "KilledBrownian", "ReflectedBrownian", "KilledStable",
    "RngStream", "PathSample", "PathBundle", "MCEstimate", "simulate", "simulate_bundle",
    "iter_bundles", "estimate_mean_exit_time", "shift_law_check", "UnsupportedOperation",
]
