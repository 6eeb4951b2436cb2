"""Command-line entry point: ``oufit simulate|estimate|train|bench``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import secrets
import sys
from pathlib import Path

from ._io import atomic_write, fmt_float
from .errors import InvalidConfig, InvalidParams, OUError

OUTPUT_DIR_ENV = "OUFIT_OUTPUT_DIR"
METHOD_NAMES = {"ols": "OLS", "kalman": "Kalman", "nn": "NN"}

# domain field -> flag, so validation errors name what the user typed
FLAG_NAMES = {"n_steps": "steps", "n_paths": "paths", "x0": "x0"}


class UsageError(Exception):
    pass


def _flag(field):
    return "--" + FLAG_NAMES.get(field, field).replace("_", "-")


def _seed(args):
    if args.seed is None:
        args.seed = secrets.randbits(63)
    if args.seed < 0:
        raise UsageError("--seed: must be a non-negative integer")
    print(f"seed: {args.seed}")
    return args.seed


def _out(args, name):
    base = Path(args.output_dir or os.environ.get(OUTPUT_DIR_ENV) or ".")
    return base / name


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _methods(text):
    names = []
    for v in text.split(","):
        key = v.strip().lower()
        if key not in METHOD_NAMES:
            raise argparse.ArgumentTypeError(f"unknown method {v!r}; choose from {', '.join(METHOD_NAMES)}")
        names.append(METHOD_NAMES[key])
    return tuple(names)


def _obs_noise(text):
    if text == "free":
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a non-negative number or 'free'") from None
    if not value >= 0:
        raise argparse.ArgumentTypeError("observation noise must be >= 0")
    return value


def cmd_simulate(args):
    from .core import OUParams, TimeGrid, simulate, write_paths_csv
    from .plotting import render_paths_plot

    params = OUParams(args.theta, args.mu, args.sigma, args.x0, args.horizon)
    grid = TimeGrid.from_horizon(args.horizon, args.steps)
    if args.paths < 1:
        raise InvalidParams("n_paths", "must be >= 1")
    seed = _seed(args)
    paths = simulate(params, grid, args.paths, seed)
    out = Path(args.out) if args.out else _out(args, "paths.csv")
    write_paths_csv(paths, out)
    print(f"wrote {out} ({paths.n_paths} paths x {grid.n_steps + 1} points)")
    if args.plot:
        render_paths_plot(paths, args.plot)
        print(f"wrote {args.plot}")


def _append_report(path, report, paths):
    from .classical import REPORT_COLUMNS, report_row

    path = Path(path)
    existing = path.read_text() if path.exists() else ""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if not existing:
        w.writerow(REPORT_COLUMNS)
    w.writerow(report_row(report, paths))
    with atomic_write(path, newline="") as fh:
        fh.write(existing + buf.getvalue())


def cmd_estimate(args):
    from .classical import OptConfig, estimate_ols, kalman_mle
    from .core import read_paths_csv

    paths = read_paths_csv(args.input)
    if args.method == "NN":
        from .mlp import load_checkpoint, predict_params

        if not args.model:
            raise UsageError("--model: required for --method nn")
        model, _ = load_checkpoint(args.model)
        report = predict_params(model, paths)
    elif args.method == "Kalman":
        opt = OptConfig(max_iter=args.max_iter, xtol=args.xtol)
        report = kalman_mle(paths, args.obs_noise, opt, raise_on_nonconvergence=False)
        if not report.diagnostics["converged"]:
            print("warning: optimizer stopped at the iteration cap", file=sys.stderr)
    else:
        report = estimate_ols(paths)
    print(f"method: {report.method}")
    print(f"mu_hat: {fmt_float(report.mu_hat)}")
    print(f"theta_hat: {fmt_float(report.theta_hat)}")
    print(f"sigma_hat: {fmt_float(report.sigma_hat)}")
    for key, value in report.diagnostics.items():
        print(f"{key}: {fmt_float(value) if isinstance(value, float) else value}")
    out = Path(args.report) if args.report else _out(args, "estimates.csv")
    _append_report(out, report, paths)
    print(f"appended to {out}")


def cmd_train(args):
    from .mlp import TrainConfig, save_checkpoint, train, write_history

    seed = _seed(args)
    config = TrainConfig(
        n_train=args.n_train, n_val=args.n_val, feature_len=args.feature_len,
        hidden=args.hidden, batch_size=args.batch_size, learning_rate=args.lr,
        epochs=args.epochs, seed=seed,
    )
    model, history = train(config)
    ckpt = Path(args.out) if args.out else _out(args, "model.npz")
    hist = Path(args.history) if args.history else _out(args, "history.csv")
    save_checkpoint(model, ckpt, config)
    write_history(history, hist)
    best = min(row.val_loss for row in history)
    print(f"best validation loss: {fmt_float(best)}")
    print(f"wrote {ckpt}")
    print(f"wrote {hist}")


def cmd_bench(args):
    from .harness import ExperimentGrid, format_aggregate, read_grid_file, run_grid, write_table
    from .plotting import render_error_plot

    if args.grid:
        grid, file_seed = read_grid_file(args.grid)
        if args.seed is None:
            args.seed = file_seed
    else:
        grid = ExperimentGrid(
            theta=args.theta, mu=args.mu, sigma=args.sigma, x0=args.x0,
            paths=args.paths, n_steps=args.steps, horizons=args.horizons,
            replicates=args.replicates, methods=args.methods,
        )
    model = None
    if "NN" in grid.methods:
        if not args.model:
            raise UsageError("--model: required when methods include nn")
        from .mlp import load_checkpoint

        model, _ = load_checkpoint(args.model)
    seed = _seed(args)
    result = run_grid(grid, model, seed, workers=args.threads)
    table = Path(args.table) if args.table else _out(args, "table.csv")
    plot = Path(args.plot) if args.plot else _out(args, "errors.svg")
    write_table(result, table)
    render_error_plot(result, plot)
    print(format_aggregate(result))
    failed = sum(1 for r in result.rows if not r.ok)
    if failed:
        print(f"warning: {failed} estimator runs failed; see the error column", file=sys.stderr)
    print(f"wrote {table}")
    print(f"wrote {plot}")


def build_parser():
    parser = argparse.ArgumentParser(prog="oufit", description="Ornstein-Uhlenbeck parameter estimation")
    parser.add_argument("--output-dir", help=f"default directory for outputs (env {OUTPUT_DIR_ENV}, else .)")
    parser.add_argument("--threads", type=int, default=1, help="worker cap for parallel stages")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def ou_flags(p, defaults):
        for name, value in defaults.items():
            p.add_argument(f"--{name}", type=float, default=value)

    p = sub.add_parser("simulate", help="simulate OU paths to CSV")
    ou_flags(p, {"theta": 3.0, "mu": 0.5, "sigma": 0.5, "x0": 0.0, "horizon": 1.0})
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--paths", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV path (default <output-dir>/paths.csv)")
    p.add_argument("--plot", help="also write an SVG of the trajectories here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate parameters from a paths CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--method", type=lambda s: _methods(s)[0], default="OLS", help="ols, kalman or nn")
    p.add_argument("--obs-noise", type=_obs_noise, default=0.0,
                   help="Kalman observation noise std, or 'free' to fit it")
    p.add_argument("--model", help="checkpoint for --method nn")
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--xtol", type=float, default=1e-8)
    p.add_argument("--report", help="CSV to append the estimate to (default <output-dir>/estimates.csv)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("train", help="train the MLP estimator")
    p.add_argument("--n-train", type=int, default=20000)
    p.add_argument("--n-val", type=int, default=2000)
    p.add_argument("--feature-len", type=int, default=100)
    p.add_argument("--hidden", type=_int_list, default=(128, 128))
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="checkpoint path (default <output-dir>/model.npz)")
    p.add_argument("--history", help="history CSV (default <output-dir>/history.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="run the benchmark grid")
    p.add_argument("--grid", help="key=value grid file; overrides the grid flags")
    ou_flags(p, {"theta": 3.0, "mu": 0.5, "sigma": 0.5, "x0": 0.0})
    p.add_argument("--paths", type=_int_list, default=(100, 500))
    p.add_argument("--steps", type=_int_list, default=(1000, 5000))
    p.add_argument("--horizons", type=_float_list, default=(1.0, 5.0))
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--methods", type=_methods, default=("OLS", "Kalman"))
    p.add_argument("--model", help="checkpoint, required for nn")
    p.add_argument("--seed", type=int)
    p.add_argument("--table", help="CSV path (default <output-dir>/table.csv)")
    p.add_argument("--plot", help="SVG path (default <output-dir>/errors.svg)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads: must be >= 1")
    try:
        args.func(args)
    except InvalidParams as exc:
        print(f"error: {_flag(exc.field)}: {str(exc).split(': ', 1)[1]}", file=sys.stderr)
        return 2
    except (InvalidConfig, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OUError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
