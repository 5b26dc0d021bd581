"""Grid functions: values on a 1-D spatial grid, optionally stacked over time."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class GridFunction:
    """Piecewise-linear function on an increasing 1-D grid.

    ``values`` has shape ``(n,)`` or ``(n_t, n)`` when ``times`` is given.
    Reads outside ``[grid[0], grid[-1]]`` return ``outside`` (a number, the
    boundary condition of a killed problem) or the nearest end value when
    ``outside == "clamp"``.
    """

    grid: np.ndarray
    values: np.ndarray
    std_error: np.ndarray | None = None
    times: np.ndarray | None = None
    outside: float | str = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.ndim != 1 or len(self.grid) < 2 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing with at least two points")
        if self.values.shape[-1] != len(self.grid):
            raise ValueError("values do not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")
        if self.times is not None:
            self.times = np.asarray(self.times, dtype=float)
            if self.values.shape != (len(self.times), len(self.grid)):
                raise ValueError("time-space values must have shape (n_times, n_points)")
        if self.std_error is None:
            self.std_error = np.zeros_like(self.values)
        else:
            self.std_error = np.asarray(self.std_error, dtype=float)

    @property
    def n_points(self) -> int:
        return len(self.grid)

    def slice(self, j: int) -> "GridFunction":
        """Spatial grid function at time index ``j``."""
        if self.times is None:
            raise ValueError("not a time-space grid function")
        return GridFunction(self.grid, self.values[j], self.std_error[j], None, self.outside, dict(self.meta))

    def __call__(self, x) -> np.ndarray:
        if self.times is not None:
            raise ValueError("evaluate a time slice of a time-space grid function")
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, 0]
        if self.outside == "clamp":
            return np.interp(x, self.grid, self.values)
        fill = float(self.outside)
        return np.interp(x, self.grid, self.values, left=fill, right=fill)

    def sup_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def to_csv(self, path) -> None:
        """Rows ``t, x, value, std_error`` (``t`` empty for a spatial function)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "value", "std_error"])
            if self.times is None:
                for x, v, s in zip(self.grid, self.values, self.std_error):
                    w.writerow(["", repr(float(x)), repr(float(v)), repr(float(s))])
            else:
                for j, t in enumerate(self.times):
                    for x, v, s in zip(self.grid, self.values[j], self.std_error[j]):
                        w.writerow([repr(float(t)), repr(float(x)), repr(float(v)), repr(float(s))])


def uniform_grid(a: float, b: float, n_points: int) -> np.ndarray:
    if n_points < 2:
        raise ValueError("need at least two grid points")
    return np.linspace(a, b, n_points)
