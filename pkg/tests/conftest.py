import numpy as np
import pytest

from fklab.domains import Interval
from fklab.process import KilledBrownian, ReflectedBrownian


@pytest.fixture
def unit():
    return Interval(0.0, 1.0)


@pytest.fixture
def kbm(unit):
    return KilledBrownian(unit)


@pytest.fixture
def rbm(unit):
    return ReflectedBrownian(unit)


def within(est, target, k=3.0, extra=0.0):
    """``|mean - target| <= k * SE + extra`` for an MCEstimate."""
    return abs(est.mean - target) <= k * est.std_error + extra


def sin_pi(x):
    return np.sin(np.pi * np.asarray(x))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
