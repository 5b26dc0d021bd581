import math

import numpy as np
import pytest

from fklab.domains import Interval
from fklab.feynman_kac import (DivergenceError, potential, potential_grid, resolvent_equation_residual,
                               semigroup_apply, spectral_oracle_interval)
from fklab.measures import LEBESGUE, ZERO, MollifiedPoint
from fklab.process import KilledBrownian, ReflectedBrownian

from conftest import sin_pi, within


def test_semigroup_of_zero(kbm):
    est = semigroup_apply(kbm, 0.0, 0.5, 0.5, n_paths=100)
    assert est.mean == 0.0 and est.std_error == 0.0


def test_semigroup_eigenfunction(kbm):
    est = semigroup_apply(kbm, sin_pi, 0.2, 0.5, n_paths=40_000, seed=2)
    target = math.exp(-math.pi ** 2 * 0.2 / 2)
    assert target == pytest.approx(0.37266, abs=1e-4)
    assert within(est, target, extra=0.02 * target)


def test_semigroup_killing_factorizes_exactly(unit):
    t = [0.1, 0.4]
    base = semigroup_apply(KilledBrownian(unit), sin_pi, t, 0.3, n_paths=2000, seed=5)
    killed = semigroup_apply(KilledBrownian(unit, 1.5), sin_pi, t, 0.3, n_paths=2000, seed=5)
    for b, k, tj in zip(base, killed, t):
        assert k.mean == b.mean * math.exp(-1.5 * tj)


def test_semigroup_monotone_and_positive(kbm):
    ests = semigroup_apply(kbm, sin_pi, [0.05, 0.1, 0.2, 0.4, 0.8], 0.5, n_paths=10_000, seed=8)
    for a, b in zip(ests, ests[1:]):
        assert b.mean <= a.mean + 3 * (a.std_error + b.std_error)
    assert all(e.mean >= -3 * e.std_error for e in ests)
    assert all(abs(e.mean) <= 1 + 3 * e.std_error for e in ests)


def test_semigroup_at_time_zero(kbm):
    assert semigroup_apply(kbm, sin_pi, 0.0, 0.25, n_paths=10).mean == pytest.approx(math.sin(math.pi / 4))


def test_potential_of_lebesgue_is_exit_time(kbm):
    est = potential(kbm, LEBESGUE, x=0.3, n_paths=20_000, seed=3)
    assert within(est, 0.21, extra=0.003)


def test_potential_large_alpha_is_small(kbm):
    est = potential(kbm, LEBESGUE, alpha=1e3, x=0.5, n_paths=2000, seed=1)
    assert est.mean <= 1e-3 + 1e-12


def test_potential_diverges_for_recurrent(rbm):
    with pytest.raises(DivergenceError):
        potential(rbm, LEBESGUE, alpha=0.0, x=0.5, n_paths=10)


def test_potential_grid_zero_measure(kbm):
    gf = potential_grid(kbm, ZERO, None, 0.0, np.linspace(0, 1, 5), 50)
    assert np.all(gf.values == 0)


def test_resolvent_identity_lam_one(kbm):
    rep = resolvent_equation_residual(kbm, LEBESGUE, 1.0, [0.3, 0.6], n_outer=2000, n_inner=500, seed=2)
    assert rep.passes()


def test_resolvent_identity_lam_two(kbm):
    rep = resolvent_equation_residual(kbm, LEBESGUE, 2.0, [0.5], n_outer=4000, n_inner=2000, seed=3)
    assert rep.passes()


def test_resolvent_zero_measure(kbm):
    rep = resolvent_equation_residual(kbm, ZERO, 2.0, [0.5], n_outer=100, n_inner=100)
    assert rep.max_residual == 0.0


def test_oracles(unit):
    assert spectral_oracle_interval("semigroup", unit, 0.5, phi=sin_pi, t=0.3) == pytest.approx(
        math.exp(-math.pi ** 2 * 0.15), rel=1e-9)
    assert spectral_oracle_interval("potential", unit, 0.3) == pytest.approx(0.21)
    assert spectral_oracle_interval("semigroup", unit, 0.2, phi=sin_pi, t=0.0) == pytest.approx(math.sin(0.2 * math.pi))
    # survival integral from 0 to infinity is the mean exit time
    assert spectral_oracle_interval("survival_integral", unit, 0.3, n=1e-9, m=math.inf) == pytest.approx(0.21, abs=1e-6)
    # potential with a callable density agrees with the closed form for constants
    assert spectral_oracle_interval("potential", unit, 0.4, beta=lambda s: np.ones_like(s), alpha=2.0) == \
        pytest.approx(spectral_oracle_interval("potential", unit, 0.4, beta=1.0, alpha=2.0), rel=1e-8)


def test_oracle_rejects_other_domains():
    from fklab.domains import Ball
    with pytest.raises(ValueError):
        spectral_oracle_interval("mean_exit", Ball((0.0, 0.0), 1.0), 0.0)
