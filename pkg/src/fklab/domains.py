"""State-space domains: intervals, boxes, balls and the whole space."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    """A point or parameter is incompatible with the domain."""


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, d) if d > 1 else x.reshape(-1, 1)
    return x


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``prod_i (lows[i], highs[i])``."""

    lows: tuple[float, ...]
    highs: tuple[float, ...]

    def __post_init__(self):
        lows = tuple(float(v) for v in np.atleast_1d(self.lows))
        highs = tuple(float(v) for v in np.atleast_1d(self.highs))
        if len(lows) != len(highs) or not lows:
            raise DomainError("lows and highs must have the same positive length")
        if any(lo >= hi for lo, hi in zip(lows, highs)):
            raise DomainError(f"degenerate box {lows} x {highs}")
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)

    @property
    def dim(self) -> int:
        return len(self.lows)

    @property
    def bounded(self) -> bool:
        return True

    def volume(self) -> float:
        return float(np.prod(np.subtract(self.highs, self.lows)))

    def contains(self, x) -> np.ndarray:
        """Open-set membership, vectorized over rows of ``x``."""
        x = _as_points(x, self.dim)
        return np.all((x > self.lows) & (x < self.highs), axis=1)

    def closure_contains(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        return np.all((x >= self.lows) & (x <= self.highs), axis=1)

    def boundary_distance(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        gap = np.minimum(x - np.asarray(self.lows), np.asarray(self.highs) - x)
        return np.maximum(gap.min(axis=1), 0.0)

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lows, self.highs, size=(n, self.dim))


class Interval(Box):
    """The open interval ``(a, b)``."""

    def __init__(self, a: float, b: float):
        super().__init__((a,), (b,))

    @property
    def a(self) -> float:
        return self.lows[0]

    @property
    def b(self) -> float:
        return self.highs[0]

    def __repr__(self):
        return f"Interval({self.a!r}, {self.b!r})"


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in np.atleast_1d(self.center)))
        if not self.radius > 0:
            raise DomainError(f"radius must be positive, got {self.radius}")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def bounded(self) -> bool:
        return True

    def volume(self) -> float:
        d = self.dim
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius ** d

    def _radius_of(self, x):
        x = _as_points(x, self.dim)
        return np.linalg.norm(x - np.asarray(self.center), axis=1)

    def contains(self, x) -> np.ndarray:
        return self._radius_of(x) < self.radius

    def closure_contains(self, x) -> np.ndarray:
        return self._radius_of(x) <= self.radius

    def boundary_distance(self, x) -> np.ndarray:
        return np.maximum(self.radius - self._radius_of(x), 0.0)

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        g = rng.standard_normal((n, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = self.radius * rng.random(n) ** (1.0 / self.dim)
        return np.asarray(self.center) + g * r[:, None]


@dataclass(frozen=True)
class FullSpace:
    dim: int = 1

    @property
    def bounded(self) -> bool:
        return False

    def volume(self) -> float:
        return math.inf

    def contains(self, x) -> np.ndarray:
        return np.ones(len(_as_points(x, self.dim)), dtype=bool)

    closure_contains = contains

    def boundary_distance(self, x) -> np.ndarray:
        return np.full(len(_as_points(x, self.dim)), np.inf)


DomainSpec = Box | Ball | FullSpace
