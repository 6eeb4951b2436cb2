"""Benchmark grid: simulate each (paths, n_steps, horizon) cell repeatedly and
run every requested estimator on the same PathSet."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write, fmt_float
from .classical import METHODS, estimate_ols, kalman_mle
from .core import OUParams, TimeGrid, simulate
from .errors import EmptyResult, InvalidConfig, ParseError

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("paths", "n_steps", "horizon", "replicate", "method",
                 "mu_hat", "theta_hat", "sigma_hat", "seed", "error")
AGGREGATE_TAG = "mean"
PARAMS = ("mu", "theta", "sigma")


@dataclass(frozen=True)
class ExperimentGrid:
    theta: float = 3.0
    mu: float = 0.5
    sigma: float = 0.5
    x0: float = 0.0
    paths: tuple = (100, 500)
    n_steps: tuple = (1000, 5000)
    horizons: tuple = (1.0, 5.0)
    replicates: int = 20
    methods: tuple = ("OLS", "Kalman")

    def __post_init__(self):
        OUParams(self.theta, self.mu, self.sigma, self.x0, 1.0)
        if self.replicates < 1:
            raise InvalidConfig(f"replicates must be >= 1, got {self.replicates}")
        if not (self.paths and self.n_steps and self.horizons):
            raise InvalidConfig("paths, n_steps and horizons must each list at least one value")
        if any(p < 1 for p in self.paths) or any(n < 1 for n in self.n_steps):
            raise InvalidConfig("paths and n_steps entries must be >= 1")
        if any(not h > 0 for h in self.horizons):
            raise InvalidConfig("horizons must be positive")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise InvalidConfig(f"unknown methods {bad}; choose from {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise InvalidConfig("methods must not repeat")

    def cells(self):
        """(paths, n_steps, horizon) triples, paths outermost."""
        return list(itertools.product(self.paths, self.n_steps, self.horizons))

    def truth(self, horizon=1.0):
        return OUParams(self.theta, self.mu, self.sigma, self.x0, horizon)


def _fmt_list(values):
    return ",".join(str(v) for v in values)


def write_grid_file(grid, path, seed=None):
    lines = [
        f"theta={fmt_float(grid.theta)}",
        f"mu={fmt_float(grid.mu)}",
        f"sigma={fmt_float(grid.sigma)}",
        f"x0={fmt_float(grid.x0)}",
        f"paths={_fmt_list(grid.paths)}",
        f"n_steps={_fmt_list(grid.n_steps)}",
        f"horizons={_fmt_list(fmt_float(h) for h in grid.horizons)}",
        f"replicates={grid.replicates}",
        f"methods={_fmt_list(grid.methods)}",
    ]
    if seed is not None:
        lines.append(f"seed={seed}")
    with atomic_write(path) as fh:
        fh.write("\n".join(lines) + "\n")


def read_grid_file(path):
    """Parse a key=value grid file; returns ``(ExperimentGrid, seed or None)``.

    Blank lines and ``#`` comments are ignored; missing keys take defaults.
    """
    path = Path(path)
    conv = {
        "theta": float, "mu": float, "sigma": float, "x0": float,
        "paths": lambda s: tuple(int(v) for v in s.split(",")),
        "n_steps": lambda s: tuple(int(v) for v in s.split(",")),
        "horizons": lambda s: tuple(float(v) for v in s.split(",")),
        "replicates": int,
        "methods": lambda s: tuple(v.strip() for v in s.split(",") if v.strip()),
        "seed": int,
    }
    kwargs = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep:
                raise ParseError(path, lineno, f"expected key=value, got {line!r}")
            if key not in conv:
                raise ParseError(path, lineno, f"unknown key {key!r}")
            try:
                kwargs[key] = conv[key](value)
            except ValueError as exc:
                raise ParseError(path, lineno, f"bad value for {key}: {exc}") from None
    seed = kwargs.pop("seed", None)
    return ExperimentGrid(**kwargs), seed


@dataclass
class GridRow:
    paths: int
    n_steps: int
    horizon: float
    replicate: int
    method: str
    mu_hat: float
    theta_hat: float
    sigma_hat: float
    seed: int
    error: str = ""
    diagnostics: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def ok(self):
        return not self.error

    def estimates(self):
        return (self.mu_hat, self.theta_hat, self.sigma_hat)


@dataclass
class GridResult:
    truth: tuple
    methods: tuple
    rows: list
    aggregate: dict
    errors: dict

    @classmethod
    def from_rows(cls, truth, methods, rows):
        """Aggregate successful rows: per-method means and mean absolute errors."""
        aggregate, errors = {}, {}
        truth_arr = np.asarray(truth, dtype=np.float64)
        for m in methods:
            est = np.array([r.estimates() for r in rows if r.method == m and r.ok], dtype=np.float64)
            if est.size == 0:
                aggregate[m] = (math.nan,) * 3
                errors[m] = (math.nan,) * 3
                continue
            aggregate[m] = tuple(float(v) for v in est.mean(axis=0))
            errors[m] = tuple(float(v) for v in np.abs(est - truth_arr).mean(axis=0))
        return cls(tuple(truth), tuple(methods), list(rows), aggregate, errors)


def derive_seed(seed, cell_index, replicate):
    """Independent 63-bit seed for one (cell, replicate)."""
    ss = np.random.SeedSequence(seed, spawn_key=(cell_index, replicate))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def default_estimators(nn_model=None, kalman_obs_noise=0.0):
    from .mlp import predict_params

    est = {
        "OLS": estimate_ols,
        "Kalman": lambda paths: kalman_mle(paths, kalman_obs_noise),
    }
    if nn_model is not None:
        est["NN"] = lambda paths: predict_params(nn_model, paths)
    return est


def _run_one(grid, estimators, cell_index, cell, replicate, seed):
    n_paths, n_steps, horizon = cell
    cell_seed = derive_seed(seed, cell_index, replicate)
    params = grid.truth(horizon)
    paths = simulate(params, TimeGrid.from_horizon(horizon, n_steps), n_paths, cell_seed)
    rows = []
    for method in grid.methods:
        try:
            rep = estimators[method](paths)
            rows.append(GridRow(n_paths, n_steps, float(horizon), replicate, method,
                                float(rep.mu_hat), float(rep.theta_hat), float(rep.sigma_hat),
                                cell_seed, "", dict(rep.diagnostics)))
        except Exception as exc:  # recorded, never aborts the grid
            log.warning("%s failed on cell %s replicate %d: %s", method, cell, replicate, exc)
            rows.append(GridRow(n_paths, n_steps, float(horizon), replicate, method,
                                math.nan, math.nan, math.nan, cell_seed,
                                f"{type(exc).__name__}: {exc}"))
    return rows


def run_grid(grid, nn_model=None, seed=0, *, estimators=None, workers=1):
    """Run every method on every (cell, replicate) and aggregate.

    ``estimators`` maps method name to ``f(PathSet) -> EstimateReport`` and
    overrides the defaults. Output order is fixed (cell, replicate, method)
    whatever ``workers`` is.
    """
    if estimators is None:
        if "NN" in grid.methods and nn_model is None:
            raise InvalidConfig("method NN requested but no model supplied")
        estimators = default_estimators(nn_model)
    missing = [m for m in grid.methods if m not in estimators]
    if missing:
        raise InvalidConfig(f"no estimator for methods {missing}")

    tasks = [(ci, cell, rep) for ci, cell in enumerate(grid.cells()) for rep in range(grid.replicates)]
    run = lambda t: _run_one(grid, estimators, t[0], t[1], t[2], seed)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run, tasks))
    else:
        chunks = [run(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    return GridResult.from_rows((grid.mu, grid.theta, grid.sigma), grid.methods, rows)


def write_table(result, path):
    """Write one row per (cell, replicate, method), then one mean row per method."""
    if not result.methods or not result.rows:
        raise EmptyResult("nothing to write: result has no methods or rows")
    try:
        with atomic_write(path, newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TABLE_COLUMNS)
            for r in result.rows:
                w.writerow([r.paths, r.n_steps, fmt_float(r.horizon), r.replicate, r.method,
                            fmt_float(r.mu_hat), fmt_float(r.theta_hat), fmt_float(r.sigma_hat),
                            r.seed, r.error])
            for m in result.methods:
                w.writerow(["", "", "", AGGREGATE_TAG, m, *(fmt_float(v) for v in result.aggregate[m]), "", ""])
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write table: {exc.strerror}", str(path)) from exc


def read_table(path, truth=(0.5, 3.0, 0.5)):
    """Parse a table written by :func:`write_table`.

    ``truth`` is ``(mu, theta, sigma)``, needed to rebuild the error summary.
    The aggregate block is taken from the file as written.
    """
    path = Path(path)
    rows, aggregate, methods = [], {}, []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TABLE_COLUMNS:
            raise ParseError(path, 1, f"expected header {','.join(TABLE_COLUMNS)}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(TABLE_COLUMNS):
                raise ParseError(path, lineno, f"expected {len(TABLE_COLUMNS)} fields, got {len(rec)}")
            try:
                if rec[3] == AGGREGATE_TAG:
                    aggregate[rec[4]] = tuple(float(v) for v in rec[5:8])
                    methods.append(rec[4])
                    continue
                rows.append(GridRow(int(rec[0]), int(rec[1]), float(rec[2]), int(rec[3]), rec[4],
                                    float(rec[5]), float(rec[6]), float(rec[7]), int(rec[8]), rec[9]))
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    result = GridResult.from_rows(truth, tuple(methods), rows)
    result.aggregate = aggregate
    return result


def format_aggregate(result):
    """Plain-text aggregate table for terminal output."""
    lines = ["method,mu_hat,theta_hat,sigma_hat,mae_mu,mae_theta,mae_sigma"]
    for m in result.methods:
        vals = (*result.aggregate[m], *result.errors[m])
        lines.append(",".join([m, *(fmt_float(v) for v in vals)]))
    return "\n".join(lines)
