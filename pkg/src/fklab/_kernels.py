"""Compiled path-stepping kernels.

Random numbers are drawn inline from a numpy ``Generator`` (numba reproduces
numpy's algorithms bit for bit).  The kernel is resumable: when the output
buffers are full it returns early, the Python driver grows them and calls
again, and the generator simply continues.  Buffer sizes therefore never
change the numbers a path sees.
"""
import math

import numpy as np
from numba import njit

DONE = 0
NEED_OUT = 2

PROC_KILLED_BM = 0
PROC_REFLECTED_BM = 1
PROC_KILLED_STABLE = 2

DOM_BOX = 0
DOM_BALL = 1
DOM_FULL = 2


@njit(cache=True, nogil=True)
def _inside(dom, y, lo, hi, center, radius):
    d = y.shape[0]
    if dom == DOM_BOX:
        for i in range(d):
            if not (lo[i] < y[i] < hi[i]):
                return False
        return True
    if dom == DOM_BALL:
        r2 = 0.0
        for i in range(d):
            r2 += (y[i] - center[i]) ** 2
        return r2 < radius * radius
    return True


@njit(cache=True, nogil=True)
def _ball_gap(y, center, radius):
    r2 = 0.0
    for i in range(y.shape[0]):
        r2 += (y[i] - center[i]) ** 2
    return radius - math.sqrt(r2)


@njit(cache=True, nogil=True)
def _bridge_survival(dom, x, y, lo, hi, center, radius, dt):
    """Probability that the Brownian bridge from x to y stays inside."""
    if dom == DOM_BOX:
        p = 1.0
        for i in range(x.shape[0]):
            p *= 1.0 - math.exp(-2.0 * (x[i] - lo[i]) * (y[i] - lo[i]) / dt)
            p *= 1.0 - math.exp(-2.0 * (hi[i] - x[i]) * (hi[i] - y[i]) / dt)
        return p
    if dom == DOM_BALL:
        # tangent half-space approximation
        a = _ball_gap(x, center, radius)
        b = _ball_gap(y, center, radius)
        return 1.0 - math.exp(-2.0 * a * b / dt)
    return 1.0


@njit(cache=True, nogil=True)
def stable_symmetric(alpha, u0, u1):
    """Chambers-Mallows-Stuck draw with characteristic function exp(-|k|^alpha)."""
    v = math.pi * (u0 - 0.5)
    w = -math.log(1.0 - u1)
    if alpha == 1.0:
        return math.tan(v)
    return (math.sin(alpha * v) / math.cos(v) ** (1.0 / alpha)
            * (math.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha))


@njit(cache=True, nogil=True)
def positive_stable(a, u0, u1):
    """Kanter's draw of a positive a-stable variable, E exp(-sS) = exp(-s^a)."""
    t = math.pi * u0
    if t <= 0.0:
        t = 1e-300
    num = math.sin(a * t) ** (a / (1.0 - a)) * math.sin((1.0 - a) * t)
    den = math.sin(t) ** (1.0 / (1.0 - a))
    w = -math.log(1.0 - u1)
    return (num / den / w) ** ((1.0 - a) / a)


@njit(cache=True, nogil=True)
def _table(tab, row, tlo, thx, x):
    nx = tab.shape[1]
    j = (x - tlo) / thx
    i = int(j)
    if i < 0:
        i = 0
    elif i > nx - 2:
        i = nx - 2
    fr = j - i
    return tab[row, i] * (1.0 - fr) + tab[row, i + 1] * fr


@njit(cache=True, nogil=True)
def run_paths(proc, dom, lo, hi, center, radius, alpha, dt, n_steps,
              starts, gen, record, st, cur, run,
              states, dl, contact, offsets, lifetime, final,
              acc, dtab, stab, tlo, thx, disc, w0, w1, wk, snaps, snap_x, snap_int):
    """Advance paths ``st[0]..n-1`` until done or the output buffer is full.

    ``st`` holds ``[path, steps_done, out_row, started, next_snap]`` and
    ``cur``/``run`` carry the in-flight state; both are written back before
    an early return so the call can be resumed.

    With ``acc`` set (one-dimensional state only) the kernel also integrates
    ``dtab`` (density part, trapezoid in time) and ``stab`` (boundary part,
    against the local-time increments) along each path, both discounted by
    ``disc[k] = exp(-theta k dt)``, and stores the running integral at the
    steps ``snaps``.  A step contributes ``disc[k] (w0 F_k + w1 F_{k+1})``,
    the exact integral of the discount against the linear interpolant of F;
    the partial step before a kill contributes ``disc[k] wk F_k``.
    """
    n, d = starts.shape
    cap = states.shape[0]
    ns = snaps.shape[0]
    nt = dtab.shape[0]
    sdt = math.sqrt(dt)
    scale = dt ** (1.0 / alpha) if proc == PROC_KILLED_STABLE else 0.0
    y = np.empty(d)
    y_wall = 0.0
    hit = 0
    p = st[0]
    k = st[1]
    o = st[2]
    started = st[3]
    js = st[4]
    integral = run[0]
    f0 = run[1]
    code = DONE
    while p < n:
        if started == 0:
            if record and o >= cap:
                code = NEED_OUT
                break
            for i in range(d):
                cur[i] = starts[p, i]
            if record:
                for i in range(d):
                    states[o, i] = cur[i]
                    contact[o, i] = np.nan
                dl[o] = 0.0
                o += 1
            k = 0
            js = 0
            started = 1
            integral = 0.0
            if proc != PROC_REFLECTED_BM and not _inside(dom, cur, lo, hi, center, radius):
                lifetime[p] = 0.0
                for i in range(d):
                    final[p, i] = cur[i]
                for j in range(ns):
                    snap_int[p, j] = 0.0
                    for i in range(d):
                        snap_x[p, j, i] = np.nan
                offsets[p + 1] = o
                p += 1
                started = 0
                continue
            if acc:
                f0 = _table(dtab, 0, tlo, thx, cur[0])
            while js < ns and snaps[js] == 0:
                snap_int[p, js] = 0.0
                for i in range(d):
                    snap_x[p, js, i] = cur[i]
                js += 1
        killed = False
        while k < n_steps:
            if record and o >= cap:
                code = NEED_OUT
                break
            step_dl = 0.0
            if proc == PROC_KILLED_BM:
                if dom == DOM_BOX and d == 1:
                    x = cur[0]
                    yy = x + sdt * gen.standard_normal()
                    y[0] = yy
                    if not (lo[0] < yy < hi[0]):
                        killed = True
                    else:
                        surv = ((1.0 - math.exp(-2.0 * (x - lo[0]) * (yy - lo[0]) / dt))
                                * (1.0 - math.exp(-2.0 * (hi[0] - x) * (hi[0] - yy) / dt)))
                        if surv < 1.0:
                            killed = gen.random() < 1.0 - surv
                else:
                    for i in range(d):
                        y[i] = cur[i] + sdt * gen.standard_normal()
                    if not _inside(dom, y, lo, hi, center, radius):
                        killed = True
                    else:
                        surv = _bridge_survival(dom, cur, y, lo, hi, center, radius, dt)
                        if surv < 1.0:
                            killed = gen.random() < 1.0 - surv
            elif proc == PROC_KILLED_STABLE:
                if d == 1:
                    y[0] = cur[0] + scale * stable_symmetric(alpha, gen.random(), gen.random())
                else:
                    s = positive_stable(0.5 * alpha, gen.random(), gen.random())
                    amp = math.sqrt(2.0 * dt ** (2.0 / alpha) * s)
                    for i in range(d):
                        y[i] = cur[i] + amp * gen.standard_normal()
                if not _inside(dom, y, lo, hi, center, radius):
                    killed = True
            else:
                for i in range(d):
                    x = cur[i]
                    yi = x + sdt * gen.standard_normal()
                    push = 0.0
                    # bridge extremum against the nearer wall, drawn only
                    # when the crossing probability is nonzero
                    if x - lo[i] <= hi[i] - x:
                        gap = (x - lo[i]) * (yi - lo[i])
                        if yi <= lo[i] or math.exp(-2.0 * gap / dt) > 0.0:
                            disc_ = math.sqrt((yi - x) ** 2 - 2.0 * dt * math.log(1.0 - gen.random()))
                            m = 0.5 * (x + yi - disc_)
                            if m < lo[i]:
                                push = lo[i] - m
                                yi += push
                                hit = i
                                y_wall = lo[i]
                    else:
                        gap = (hi[i] - x) * (hi[i] - yi)
                        if yi >= hi[i] or math.exp(-2.0 * gap / dt) > 0.0:
                            disc_ = math.sqrt((yi - x) ** 2 - 2.0 * dt * math.log(1.0 - gen.random()))
                            m = 0.5 * (x + yi + disc_)
                            if m > hi[i]:
                                push = m - hi[i]
                                yi -= push
                                hit = i
                                y_wall = hi[i]
                    # far wall inside one step: project (rare for small dt)
                    if yi > hi[i]:
                        push += yi - hi[i]
                        yi = hi[i]
                        hit = i
                        y_wall = hi[i]
                    elif yi < lo[i]:
                        push += lo[i] - yi
                        yi = lo[i]
                        hit = i
                        y_wall = lo[i]
                    step_dl += 2.0 * push
                    y[i] = yi
            if killed:
                lifetime[p] = (k + 0.5) * dt
                for i in range(d):
                    final[p, i] = cur[i]
                if acc:
                    integral += disc[k] * wk * f0
                while js < ns:
                    snap_int[p, js] = integral
                    for i in range(d):
                        snap_x[p, js, i] = np.nan
                    js += 1
                break
            for i in range(d):
                cur[i] = y[i]
            k += 1
            if acc:
                row = k if k < nt else nt - 1
                f1 = _table(dtab, row, tlo, thx, cur[0])
                integral += disc[k - 1] * (w0 * f0 + w1 * f1)
                f0 = f1
                if step_dl > 0.0:
                    side = 0 if y_wall == lo[0] else 1
                    integral += step_dl * stab[row, side] * disc[k]
            while js < ns and snaps[js] == k:
                snap_int[p, js] = integral
                for i in range(d):
                    snap_x[p, js, i] = cur[i]
                js += 1
            if record:
                for i in range(d):
                    states[o, i] = y[i]
                    contact[o, i] = np.nan
                dl[o] = step_dl
                if step_dl > 0.0:
                    for i in range(d):
                        contact[o, i] = y[i]
                    contact[o, hit] = y_wall
                o += 1
        if code != DONE:
            break
        if not killed:
            lifetime[p] = np.inf
            for i in range(d):
                final[p, i] = cur[i]
        offsets[p + 1] = o
        p += 1
        started = 0
    st[0] = p
    st[1] = k
    st[2] = o
    st[3] = started
    st[4] = js
    run[0] = integral
    run[1] = f0
    return code
