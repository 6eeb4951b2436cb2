"""OU process types, analytic moments and the exact-discretization simulator.

The simulator uses the exact Gaussian transition

    X[n+1] = mu + (X[n] - mu) * exp(-theta*dt) + s * eps[n],
    s**2 = sigma**2 / (2*theta) * (1 - exp(-2*theta*dt)),

so it is exact in distribution for any step size.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from ._io import atomic_write, fmt_float
from .errors import CapacityError, InvalidParams, ParseError

# Upper bound on P*(N+1) float64 entries held by one PathSet (2 GiB).
MAX_VALUES = 2**28


def _check_finite(name, value):
    if not math.isfinite(value):
        raise InvalidParams(name, f"must be finite, got {value!r}")


@dataclass(frozen=True)
class OUParams:
    theta: float
    mu: float
    sigma: float
    x0: float = 0.0
    horizon: float = 1.0

    def __post_init__(self):
        for name in ("theta", "mu", "sigma", "x0", "horizon"):
            _check_finite(name, getattr(self, name))
        if self.theta <= 0:
            raise InvalidParams("theta", f"must be > 0, got {self.theta!r}")
        if self.sigma < 0:
            raise InvalidParams("sigma", f"must be >= 0, got {self.sigma!r}")
        if self.horizon <= 0:
            raise InvalidParams("horizon", f"must be > 0, got {self.horizon!r}")

    @property
    def stationary_var(self):
        return self.sigma**2 / (2.0 * self.theta)


@dataclass(frozen=True)
class TimeGrid:
    n_steps: int
    dt: float

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidParams("n_steps", f"must be an integer >= 1, got {self.n_steps!r}")
        _check_finite("dt", self.dt)
        if self.dt <= 0:
            raise InvalidParams("dt", f"must be > 0, got {self.dt!r}")

    @classmethod
    def from_horizon(cls, horizon, n_steps):
        return cls(int(n_steps), horizon / n_steps)

    @property
    def horizon(self):
        return self.n_steps * self.dt

    def times(self):
        return np.arange(self.n_steps + 1, dtype=np.float64) * self.dt


@dataclass(frozen=True, eq=False)
class PathSet:
    """A batch of trajectories on a shared grid.

    ``values`` is a read-only ``(n_paths, n_steps + 1)`` float64 array whose
    first column is the common initial state.
    """

    grid: TimeGrid
    values: np.ndarray
    seed: int | None = None
    params: OUParams | None = None

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.grid.n_steps + 1:
            raise InvalidParams(
                "values", f"expected shape (P, {self.grid.n_steps + 1}), got {values.shape}"
            )
        if values.shape[0] < 1:
            raise InvalidParams("n_paths", "must be >= 1")
        if not np.all(np.isfinite(values)):
            raise InvalidParams("values", "contains non-finite entries")
        if np.any(values[:, 0] != values[0, 0]):
            raise InvalidParams("values", "paths do not share a common initial state")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_paths(self):
        return self.values.shape[0]

    @property
    def x0(self):
        return float(self.values[0, 0])

    def __eq__(self, other):
        if not isinstance(other, PathSet):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.seed == other.seed
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )


def analytic_mean(params, t):
    return params.mu + (params.x0 - params.mu) * math.exp(-params.theta * t)


def analytic_cov(params, t, s):
    # Stationary kernel; the transient factor 1 - exp(-2 theta min(t, s)) is omitted.
    return params.stationary_var * math.exp(-params.theta * abs(t - s))


def step_coefficients(params, dt):
    """Return ``(beta, noise_std)`` of the one-step transition over ``dt``."""
    if not dt > 0:
        raise InvalidParams("dt", f"must be > 0, got {dt!r}")
    beta = math.exp(-params.theta * dt)
    # -expm1 keeps 1 - exp(-2 theta dt) accurate for small steps.
    noise_std = params.sigma * math.sqrt(-math.expm1(-2.0 * params.theta * dt) / (2.0 * params.theta))
    return beta, noise_std


def path_normals(seed, path_index, n):
    """Standard normals for one path.

    Each path owns the stream keyed by ``(seed, path_index)``, so draws do not
    depend on how many paths are simulated or in what order.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(path_index,))
    return np.random.Generator(np.random.PCG64(ss)).standard_normal(n)


def simulate(params, grid, n_paths, seed, *, max_values=MAX_VALUES):
    if int(n_paths) != n_paths or n_paths < 1:
        raise InvalidParams("n_paths", f"must be an integer >= 1, got {n_paths!r}")
    if seed is None or seed < 0:
        raise InvalidParams("seed", f"must be a non-negative integer, got {seed!r}")
    n_paths = int(n_paths)
    size = n_paths * (grid.n_steps + 1)
    if size > max_values:
        raise CapacityError(
            f"{n_paths} paths x {grid.n_steps + 1} points = {size} values exceeds the budget of {max_values}"
        )
    beta, noise_std = step_coefficients(params, grid.dt)

    values = np.empty((n_paths, grid.n_steps + 1), dtype=np.float64)
    values[:, 0] = params.x0
    if noise_std > 0:
        shocks = np.empty((n_paths, grid.n_steps), dtype=np.float64)
        for p in range(n_paths):
            shocks[p] = path_normals(seed, p, grid.n_steps)
        shocks *= noise_std
    else:
        shocks = np.zeros((n_paths, grid.n_steps), dtype=np.float64)
    # Deviation d = X - mu obeys d[n+1] = beta d[n] + shock[n]; zi seeds d[0].
    zi = np.full((n_paths, 1), beta * (params.x0 - params.mu))
    dev, _ = lfilter([1.0], [1.0, -beta], shocks, axis=1, zi=zi)
    values[:, 1:] = dev + params.mu
    return PathSet(grid=grid, values=values, seed=int(seed), params=params)


def write_paths_csv(paths, path):
    """Write ``t,path_0,...`` with one row per grid point."""
    times = paths.grid.times()
    with atomic_write(path, newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"path_{p}" for p in range(paths.n_paths)])
        cols = paths.values.T
        for i, t in enumerate(times):
            w.writerow([fmt_float(t)] + [fmt_float(v) for v in cols[i]])


def read_paths_csv(path):
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        if len(header) < 2 or header[0] != "t":
            raise ParseError(path, 1, "header must start with 't' followed by path columns")
        for j, name in enumerate(header[1:]):
            if name != f"path_{j}":
                raise ParseError(path, 1, f"expected column 'path_{j}', got {name!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    if len(rows) < 2:
        raise ParseError(path, len(rows) + 1, "need at least two time points")
    data = np.array(rows, dtype=np.float64)
    if data[0, 0] != 0.0:
        raise ParseError(path, 2, "time column must start at 0")
    dt = float(data[1, 0])
    grid = TimeGrid(n_steps=len(rows) - 1, dt=dt)
    try:
        return PathSet(grid=grid, values=data[:, 1:].T)
    except InvalidParams as exc:
        raise ParseError(path, 2, str(exc)) from None
