import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fklab import _kernels as K
from fklab.domains import Ball, DomainError, FullSpace, Interval
from fklab.process import (CHUNK, KilledBrownian, KilledStable, ReflectedBrownian, RngStream,
                           UnsupportedOperation, chunk_generator, estimate_mean_exit_time, ks_critical_value,
                           shift_law_check, simulate, simulate_bundle, steps_for)
from fklab.measures import LEBESGUE, SurfaceMeasure
from fklab.reference import fractional_elliptic

from conftest import within


def test_start_on_boundary_gives_zero_lifetime(kbm):
    p = simulate(kbm, 0.0, horizon=1.0)
    assert p.lifetime == 0.0
    assert len(p.states) == 1


def test_start_outside_raises(kbm):
    with pytest.raises(DomainError):
        simulate(kbm, 1.5, horizon=1.0)


def test_mean_exit_time_interval(kbm):
    est = estimate_mean_exit_time(kbm, 0.5, 20_000, dt=1e-3, seed=3)
    assert within(est, 0.25, extra=0.004)


def test_mean_exit_time_disc():
    spec = KilledBrownian(Ball((0.0, 0.0), 1.0))
    est = estimate_mean_exit_time(spec, (0.0, 0.0), 8_000, dt=1e-3, seed=4)
    # (r^2 - |x|^2) / d
    assert within(est, 0.5, extra=0.01)


def test_mean_exit_time_reflected_unsupported(rbm):
    with pytest.raises(UnsupportedOperation):
        estimate_mean_exit_time(rbm, 0.5, 100)


def test_stable_exit_time_matches_fractional_solve():
    dom = Interval(-1.0, 1.0)
    est = estimate_mean_exit_time(KilledStable(dom, 1.0), 0.0, 20_000, dt=1e-3, seed=5)
    ref = fractional_elliptic(1.0, dom, lambda x: np.ones_like(x), n_cells=400)
    oracle = float(ref(np.array([0.0]))[0])
    # oracle is first order in the mesh; the closed form (1 - x^2)^{1/2} gives 1.0
    assert abs(oracle - 1.0) < 0.005
    assert within(est, oracle, extra=0.005 + 0.02)


def test_determinism_and_worker_independence(kbm):
    a = simulate_bundle(kbm, 0.3, 3000, 1e-3, 0.5, seed=9, key=(1,))
    b = simulate_bundle(kbm, 0.3, 3000, 1e-3, 0.5, seed=9, key=(1,), workers=3)
    assert np.array_equal(a.lifetime, b.lifetime)
    assert np.array_equal(a.states, b.states)


def test_single_path_matches_batch(kbm):
    batch = simulate_bundle(kbm, 0.4, CHUNK + 10, 1e-3, 0.2, seed=1)
    p = simulate(kbm, 0.4, 0.2, rng=RngStream(1, CHUNK + 3))
    q = batch.path(CHUNK + 3)
    assert np.array_equal(p.states, q.states)
    assert p.lifetime == q.lifetime


def test_different_seeds_differ(kbm):
    a = simulate_bundle(kbm, 0.5, 200, 1e-3, 0.3, seed=1)
    b = simulate_bundle(kbm, 0.5, 200, 1e-3, 0.3, seed=2)
    assert not np.array_equal(a.lifetime, b.lifetime)


@given(x=st.floats(0.001, 0.999), y=st.floats(0.001, 0.999), dt=st.floats(1e-5, 1e-1))
def test_bridge_survival_is_a_probability(x, y, dt):
    lo, hi = np.array([0.0]), np.array([1.0])
    p = K._bridge_survival(K.DOM_BOX, np.array([x]), np.array([y]), lo, hi, np.zeros(1), 0.0, dt)
    # the naive endpoint test keeps this step with probability one
    assert 0.0 <= p <= 1.0


def test_exit_times_shrink_with_domain():
    big = estimate_mean_exit_time(KilledBrownian(Interval(0.0, 1.0)), 0.5, 5000, seed=2)
    small = estimate_mean_exit_time(KilledBrownian(Interval(0.25, 0.75)), 0.5, 5000, seed=2)
    assert small.mean < big.mean


def test_reflected_paths_stay_in_closure_and_local_time_grows_on_contact(rbm):
    b = simulate_bundle(rbm, 0.05, 500, 1e-3, 0.5, seed=11)
    assert np.all((b.states >= 0.0) & (b.states <= 1.0))
    assert np.all(b.local_time_inc >= 0.0)
    # increments only where the step touched a wall
    touched = ~np.isnan(b.contact[:, 0])
    assert np.all(b.local_time_inc[~touched] == 0.0)
    p = b.path(0)
    assert p.local_time[-1] == pytest.approx(np.sum(np.diff(p.local_time, prepend=0.0)))


def test_stable_increment_characteristic_function():
    spec = KilledStable(FullSpace(1), 1.2)
    dt = 0.01
    b = simulate_bundle(spec, 0.0, 40_000, dt, dt, seed=21, record=False)
    inc = b.final[:, 0]
    for k in (0.5, 1.0, 2.0, 5.0, 10.0):
        emp = np.mean(np.cos(k * inc))
        target = math.exp(-dt * k ** 1.2)
        assert abs(emp - target) < 4 * math.sqrt(0.5 / len(inc))


def test_shift_law_trivial_and_lebesgue():
    spec = KilledBrownian(Interval(0.0, 1.0))
    crit = ks_critical_value(4000, 4000)
    assert shift_law_check(spec, LEBESGUE, 0.5, 0.0, 0.5, 4000, seed=1) < crit
    assert shift_law_check(spec, LEBESGUE, 0.5, 1.0, 0.5, 4000, seed=1) < crit


def test_shift_law_surface():
    spec = ReflectedBrownian(Interval(0.0, 1.0))
    crit = ks_critical_value(3000, 3000)
    assert shift_law_check(spec, SurfaceMeasure(), 0.5, 2.0, 0.5, 3000, seed=2) < crit


def test_steps_for_adjusts_dt():
    n, h = steps_for(1.0, 0.3)
    assert n == 3 and h == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        steps_for(0.0, 0.1)


def test_chunk_generator_streams_are_independent_of_each_other():
    a = chunk_generator(1, (3,), 0).random(5)
    b = chunk_generator(1, (3,), 1).random(5)
    c = chunk_generator(1, (3,), 0).random(5)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, c)


def test_stable_index_validation():
    with pytest.raises(ValueError):
        KilledStable(Interval(0.0, 1.0), 2.0)
