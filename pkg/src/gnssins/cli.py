"""Command-line surface: simulate, run, compare, sweep, fit-gmm.

All outputs are headered CSV (plus JSON summaries) so results diff cleanly
and plot with anything. Exit codes: 0 success, 1 runtime failure, 2 usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .canyon_sim import (
    CSV_FLOAT,
    Dataset,
    config_to_dict,
    default_canyon_config,
    generate_lc_fixes,
    load_config,
    noise_free_config,
    read_dataset,
    simulate,
    write_dataset,
)
from .harness import ESTIMATORS, RunConfig, RunResult, run_estimator, sweep_windows
from .nls_solver import SolverError
from .residual_analysis import fit_gmm, summarize


def _parse_window(text: str) -> Optional[int]:
    if text.lower() == "batch":
        return None
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("window must be >= 1 or 'batch'")
    return value


def _fmt(value: float) -> str:
    return CSV_FLOAT % value


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.config:
        cfg = load_config(Path(args.config))
    elif args.preset == "noise-free":
        cfg = noise_free_config()
    else:
        cfg = default_canyon_config()
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    ds = simulate(cfg)
    out = Path(args.out)
    write_dataset(ds, out)
    with open(out / "sim_config.json", "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2)
    n_obs = sum(len(e.sats) for e in ds.epochs)
    print(f"wrote {out}/truth.csv imu.csv gnss.csv")
    print(
        f"epochs: {ds.n_epochs}  observations: {n_obs}  "
        f"satellites/epoch: {ds.mean_sats_per_epoch():.1f}  "
        f"nlos fraction: {ds.nlos_fraction():.3f}"
    )
    return 0


def _write_epochs_csv(path: Path, result: RunResult) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,est_x,est_y,est_z,truth_x,truth_y,truth_z,err_2d_m,residual_m,solve_time_s\n")
        for r in result.records:
            fields = (
                [r.epoch]
                + list(r.est_pos)
                + list(r.truth_pos)
                + [r.err_2d, r.residual, r.solve_time]
            )
            fh.write(",".join(_fmt(float(v)) for v in fields) + "\n")


def _write_residuals_csv(path: Path, result: RunResult) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,sat_id,constellation,residual_m,nlos\n")
        for o in result.obs_residuals:
            fh.write(
                f"{_fmt(o.epoch)},{o.sat_id},{o.constellation.value},"
                f"{_fmt(o.residual)},{int(bool(o.nlos))}\n"
            )


def _summary_dict(result: RunResult, window: Optional[int]) -> dict:
    return {
        "estimator": result.estimator,
        "window": "batch" if window is None else window,
        "mean_err_m": result.summary["mean_err"],
        "std_err_m": result.summary["std_err"],
        "total_time_s": result.summary["total_time"],
        "epochs": result.summary["epochs"],
    }


def _load_dataset(args: argparse.Namespace) -> Dataset:
    ds = read_dataset(Path(args.dataset))
    generate_lc_fixes(ds.epochs)
    return ds


def _run_config(args: argparse.Namespace, estimator: str) -> RunConfig:
    return RunConfig(estimator=estimator, window=args.window)


def cmd_run(args: argparse.Namespace) -> int:
    ds = _load_dataset(args)
    cfg = _run_config(args, args.estimator)
    result = run_estimator(ds, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_epochs_csv(out / "epochs.csv", result)
    if result.obs_residuals:
        _write_residuals_csv(out / "residuals.csv", result)
    with open(out / "summary.json", "w") as fh:
        json.dump(_summary_dict(result, cfg.window), fh, indent=2)
    s = result.summary
    print(
        f"{args.estimator}: mean 2D error {s['mean_err']:.3f} m, "
        f"std {s['std_err']:.3f} m, solve time {s['total_time']:.3f} s"
    )
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    ds = _load_dataset(args)
    names = [n.strip() for n in args.estimators.split(",")] if args.estimators else list(ESTIMATORS)
    for n in names:
        if n not in ESTIMATORS:
            raise UsageError(f"unknown estimator {n!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in names:
        result = run_estimator(ds, _run_config(args, name))
        rows.append(_summary_dict(result, args.window))
        _write_epochs_csv(out / f"epochs_{name}.csv", result)
    with open(out / "compare.csv", "w") as fh:
        fh.write("estimator,window,mean_err_m,std_err_m,total_time_s\n")
        for r in rows:
            fh.write(
                f"{r['estimator']},{r['window']},{_fmt(r['mean_err_m'])},"
                f"{_fmt(r['std_err_m'])},{_fmt(r['total_time_s'])}\n"
            )
    with open(out / "compare.json", "w") as fh:
        json.dump(rows, fh, indent=2)
    width = max(len(r["estimator"]) for r in rows)
    for r in rows:
        print(
            f"{r['estimator']:<{width}}  mean {r['mean_err_m']:8.3f} m  "
            f"std {r['std_err_m']:8.3f} m  time {r['total_time_s']:8.3f} s"
        )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    ds = _load_dataset(args)
    sizes = [_parse_window(s.strip()) for s in args.sizes.split(",")]
    rows = sweep_windows(ds, sizes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w") as fh:
        fh.write("window,mean_err_m,std_err_m,total_time_s\n")
        for r in rows:
            fh.write(
                f"{r['window']},{_fmt(r['mean_err'])},{_fmt(r['std_err'])},{_fmt(r['total_time'])}\n"
            )
    with open(out / "sweep.json", "w") as fh:
        json.dump(rows, fh, indent=2)
    for r in rows:
        print(f"window {str(r['window']):>5}  mean {r['mean_err']:8.3f} m  std {r['std_err']:8.3f} m")
    return 0


def cmd_fit_gmm(args: argparse.Namespace) -> int:
    data = np.genfromtxt(args.csv, delimiter=",", names=True)
    data = np.atleast_1d(data)
    if args.column not in (data.dtype.names or ()):
        raise UsageError(
            f"column {args.column!r} not in {args.csv} (have {data.dtype.names})"
        )
    values = np.asarray(data[args.column], dtype=float)
    if args.epoch_min is not None or args.epoch_max is not None:
        if "t" in data.dtype.names:
            epochs = data["t"]
        elif "epoch" in data.dtype.names:
            epochs = data["epoch"]
        else:
            raise UsageError("no epoch/t column available for filtering")
        mask = np.ones(values.size, dtype=bool)
        if args.epoch_min is not None:
            mask &= epochs >= args.epoch_min
        if args.epoch_max is not None:
            mask &= epochs <= args.epoch_max
        values = values[mask]
    values = values[np.isfinite(values)]
    model = fit_gmm(values, args.k)
    rows = [
        {"weight": c.weight, "mean": c.mean, "std": c.std} for c in model.components
    ]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "gmm.json", "w") as fh:
            json.dump(
                {"k": args.k, "samples": int(values.size), "components": rows}, fh, indent=2
            )
    for c in rows:
        print(f"weight {c['weight']:.4f}  mean {c['mean']:9.3f} m  std {c['std']:9.3f} m")
    return 0


class UsageError(ValueError):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gnssins",
        description="GNSS/INS integration toolkit: EKF and factor-graph estimators "
        "over synthetic urban-canyon datasets",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--config", help="simulation config JSON")
    p.add_argument("--preset", choices=["canyon", "noise-free"], default="canyon")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run one estimator over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--estimator", required=True, choices=ESTIMATORS)
    p.add_argument("--window", type=_parse_window, default=30, help="epochs or 'batch'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several estimators over one dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--estimators", help="comma list; default all four")
    p.add_argument("--window", type=_parse_window, default=30)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="window-size sweep of fgo-tc")
    p.add_argument("--dataset", required=True)
    p.add_argument("--sizes", default="1,5,10,30,batch")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit-gmm", help="fit a Gaussian mixture to a CSV column")
    p.add_argument("--csv", required=True)
    p.add_argument("--column", default="residual_m")
    p.add_argument("-k", type=int, default=3)
    p.add_argument("--epoch-min", type=float, default=None)
    p.add_argument("--epoch-max", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fit_gmm)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
