"""Command-line surface.

Subcommands: train, forecast, evaluate, ablate-n, schedule, make-data.
Every run resolves config as flags > DIFFCAST_SECTION__KEY environment
variables > --config file > defaults.  Commands validate all inputs before
writing anything, write only inside the configured output location, and are
deterministic: same config and seeds give byte-identical output files.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric error.
Failures print a single machine-parsable line `CLASS: message` to stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, engine, metrics, synthetic
from .config import load_config, model_config_from, train_config_from
from .diffusion import linear_schedule
from .errors import (
    EXIT_CONFIG_ERROR,
    EXIT_DATA_ERROR,
    EXIT_NUMERIC_ERROR,
    EXIT_OK,
    ConfigError,
    DataError,
    DiffcastError,
    NumericError,
)
from .pipeline import load_dataset, save_dataset

CSV_SCHEMA_VERSION = 1

SAMPLES_HEADER = ["window", "trajectory", "t", "entity", "value"]
QUANTILES_HEADER = ["window", "t", "entity", "level", "value"]


def _fmt(value) -> str:
    return repr(float(value))


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _error_class(exc: DiffcastError) -> str:
    if isinstance(exc, ConfigError):
        return "CONFIG_ERROR"
    if isinstance(exc, DataError):
        return "DATA_ERROR"
    if isinstance(exc, NumericError):
        return "NUMERIC_ERROR"
    return "CONFIG_ERROR"  # contract violations read as bad invocations here


def _exit_code(exc: DiffcastError) -> int:
    return {
        "CONFIG_ERROR": EXIT_CONFIG_ERROR,
        "DATA_ERROR": EXIT_DATA_ERROR,
        "NUMERIC_ERROR": EXIT_NUMERIC_ERROR,
    }[_error_class(exc)]


# -- config plumbing -----------------------------------------------------------


def _resolve_config(args) -> dict:
    cfg = load_config(path=args.config, overrides=args.set)
    # named flags outrank --set items
    mapping = [
        ("data", "dataset", "path"),
        ("format", "dataset", "format"),
        ("frequency", "dataset", "frequency"),
        ("output", "output", "directory"),
        ("seed", "train", "seed"),
        ("max_epochs", "train", "max_epochs"),
        ("samples", "forecast", "num_samples"),
        ("forecast_seed", "forecast", "seed"),
        ("horizon", "forecast", "horizon_steps"),
        ("steps", "ablation", "steps"),
        ("repeats", "ablation", "repeats"),
    ]
    for attr, section, key in mapping:
        value = getattr(args, attr, None)
        if value is not None:
            cfg[section][key] = value
    return cfg


def _load_configured_dataset(cfg: dict):
    path = cfg["dataset"]["path"]
    if not path:
        raise ConfigError("dataset.path is required (set --data or dataset.path)")
    if not os.path.exists(path):
        raise ConfigError(f"dataset path does not exist: {path}")
    frequency = cfg["dataset"]["frequency"] or None
    return load_dataset(path, cfg["dataset"]["format"], frequency)


def _outdir(cfg: dict) -> str:
    directory = cfg["output"]["directory"]
    os.makedirs(directory, exist_ok=True)
    return directory


# -- subcommands -----------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    ds = _load_configured_dataset(cfg)
    model_cfg = model_config_from(cfg, ds.dim, ds.frequency)
    train_cfg = train_config_from(cfg)

    result = engine.train(ds, model_cfg, train_cfg)

    outdir = _outdir(cfg)
    result.checkpoint.save(os.path.join(outdir, "checkpoint.bin"))
    rows = [
        (epoch, "" if train is None else _fmt(train), _fmt(val), _fmt(best))
        for epoch, train, val, best in result.history
    ]
    _write_csv(os.path.join(outdir, "training_log.csv"), ["epoch", "train_loss", "val_loss", "best"], rows)
    print(
        f"trained {result.epochs_run} epochs, "
        f"best validation loss {_fmt(result.checkpoint.best_val_loss)}"
    )
    return EXIT_OK


def _quantile_levels(cfg: dict) -> list[float]:
    levels = sorted(float(l) for l in cfg["forecast"]["quantile_levels"])
    if not levels:
        raise ConfigError("forecast.quantile_levels must name at least one level")
    for level in levels:
        if not (0.0 < level < 1.0):
            raise ConfigError(f"quantile level must be in (0, 1), got {level}")
    if len(set(levels)) != len(levels):
        raise ConfigError("forecast.quantile_levels contains duplicates")
    return levels


def cmd_forecast(args) -> int:
    cfg = _resolve_config(args)
    ckpt = engine.load_checkpoint(args.checkpoint)
    ds = _load_configured_dataset(cfg)
    if ds.dim != ckpt.model_config.series_dim:
        raise DataError(
            f"checkpoint expects {ckpt.model_config.series_dim} entities, "
            f"dataset has {ds.dim}"
        )
    levels = _quantile_levels(cfg)
    horizon = cfg["forecast"]["horizon_steps"]

    fs = engine.forecast(
        ckpt, ds, cfg["forecast"]["num_samples"], cfg["forecast"]["seed"], horizon_steps=horizon
    )
    q_levels = levels if 0.5 in levels else sorted(levels + [0.5])
    q = engine.quantiles(fs, q_levels)
    median = q[q_levels.index(0.5)]

    num_samples, horizon_len, dim = fs.samples.shape
    sample_rows = [
        (fs.window_start, s, t, fs.entity_ids[j], _fmt(fs.samples[s, t, j]))
        for s in range(num_samples)
        for t in range(horizon_len)
        for j in range(dim)
    ]
    quantile_rows = [
        (fs.window_start, t, fs.entity_ids[j], _fmt(level), _fmt(q[q_levels.index(level), t, j]))
        for t in range(horizon_len)
        for j in range(dim)
        for level in levels
    ]
    stamps = [str(np.datetime_as_string(ts, unit="s")) for ts in fs.timestamps]
    plot_data = {
        "window_start": int(fs.window_start),
        "timestamps": stamps,
        "entities": list(fs.entity_ids),
        "levels": levels,
        "median": {
            fs.entity_ids[j]: [float(median[t, j]) for t in range(horizon_len)]
            for j in range(dim)
        },
        "bands": {
            _fmt(level): {
                fs.entity_ids[j]: [
                    float(q[q_levels.index(level), t, j]) for t in range(horizon_len)
                ]
                for j in range(dim)
            }
            for level in levels
        },
    }

    outdir = _outdir(cfg)
    _write_csv(os.path.join(outdir, "forecast_samples.csv"), SAMPLES_HEADER, sample_rows)
    _write_csv(os.path.join(outdir, "forecast_quantiles.csv"), QUANTILES_HEADER, quantile_rows)
    with open(os.path.join(outdir, "plot_data.json"), "w", encoding="utf-8") as fh:
        json.dump(plot_data, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"forecast {num_samples} trajectories over {horizon_len} steps from t={fs.window_start}")
    return EXIT_OK


def _read_forecast_csv(path: str, entity_ids: list[str]) -> dict[int, np.ndarray]:
    """Parse a trajectory CSV back into per-window (S, T, D) arrays."""
    if not os.path.exists(path):
        raise ConfigError(f"forecast samples file does not exist: {path}")
    index = {name: j for j, name in enumerate(entity_ids)}
    cells: dict[int, dict] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SAMPLES_HEADER:
            raise DataError(
                f"{path}: expected header {','.join(SAMPLES_HEADER)}, got "
                f"{','.join(header) if header else 'empty file'}"
            )
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise DataError(f"{path}: row {row_no}: expected 5 fields, got {len(row)}")
            try:
                window, traj, t = int(row[0]), int(row[1]), int(row[2])
                value = float(row[4])
            except ValueError as exc:
                raise DataError(f"{path}: row {row_no}: {exc}") from None
            if row[3] not in index:
                raise DataError(
                    f"{path}: row {row_no}: unknown entity {row[3]!r}; dataset has "
                    f"{', '.join(entity_ids)}"
                )
            cells.setdefault(window, {})[(traj, t, index[row[3]])] = value
    if not cells:
        raise DataError(f"{path}: no forecast rows")

    out = {}
    dim = len(entity_ids)
    for window, values in sorted(cells.items()):
        num_samples = max(k[0] for k in values) + 1
        horizon = max(k[1] for k in values) + 1
        if len(values) != num_samples * horizon * dim:
            raise DataError(
                f"{path}: window {window} is ragged: {len(values)} rows, expected "
                f"{num_samples} trajectories x {horizon} steps x {dim} entities"
            )
        arr = np.empty((num_samples, horizon, dim))
        for (traj, t, j), value in values.items():
            arr[traj, t, j] = value
        out[window] = arr
    return out


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    ds = _load_configured_dataset(cfg)
    windows = _read_forecast_csv(args.samples_csv, list(ds.entity_ids))

    pairs = []
    for window, samples in windows.items():
        horizon = samples.shape[1]
        if window < 0 or window + horizon > ds.num_steps:
            raise DataError(
                f"forecast window at {window} spans {horizon} steps but the "
                f"dataset has {ds.num_steps}"
            )
        pairs.append((samples, ds.values[window : window + horizon]))

    report = metrics.score_windows(pairs)
    outdir = _outdir(cfg)
    with open(os.path.join(outdir, "metrics.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    _write_csv(
        os.path.join(outdir, "crps_per_entity.csv"),
        ["entity", "crps"],
        [(ds.entity_ids[j], _fmt(v)) for j, v in enumerate(report.crps_per_entity)],
    )
    print(f"crps_sum {_fmt(report.crps_sum)} over {report.windows} window(s)")
    return EXIT_OK


def _ablation_job(job):
    """Train and score one (N, seed) cell; picklable for the process pool."""
    ds, model_cfg, train_cfg, num_samples, eval_seed = job
    try:
        result = engine.train(ds, model_cfg, train_cfg)
        fs = engine.forecast(result.checkpoint, ds, num_samples, eval_seed)
        truth = ds.values[fs.window_start : fs.window_start + fs.samples.shape[1]]
        return metrics.crps_sum(fs.samples, truth), None
    except DiffcastError as exc:
        return None, _error_class(exc)


def cmd_ablate_n(args) -> int:
    cfg = _resolve_config(args)
    ds = _load_configured_dataset(cfg)
    steps = tuple(cfg["ablation"]["steps"])
    repeats = int(cfg["ablation"]["repeats"])
    if repeats < 1:
        raise ConfigError(f"ablation.repeats must be positive, got {repeats}")
    for n in steps:
        if n < 1:
            raise ConfigError(f"ablation steps must be positive, got {n}")
    num_samples = int(cfg["ablation"]["num_samples"])
    base_train = train_config_from(cfg)
    eval_seed = cfg["forecast"]["seed"]

    base_model = model_config_from(cfg, ds.dim, ds.frequency)
    jobs = []
    for n in steps:
        model_cfg = dataclasses.replace(base_model, diffusion_steps=int(n))
        for r in range(repeats):
            train_cfg = dataclasses.replace(base_train, seed=base_train.seed + r)
            jobs.append((ds, model_cfg, train_cfg, num_samples, eval_seed))

    if args.parallel:
        with ProcessPoolExecutor() as pool:
            outcomes = list(pool.map(_ablation_job, jobs))
    else:
        outcomes = [_ablation_job(job) for job in jobs]

    rows = []
    for i, n in enumerate(steps):
        cell = outcomes[i * repeats : (i + 1) * repeats]
        errors = [err for _, err in cell if err is not None]
        if errors:
            rows.append((n, "", errors[0]))
            continue
        scores = np.array([score for score, _ in cell])
        stderr = scores.std(ddof=1) / np.sqrt(repeats) if repeats > 1 else 0.0
        rows.append((n, _fmt(scores.mean()), _fmt(stderr)))

    outdir = _outdir(cfg)
    _write_csv(os.path.join(outdir, "ablation.csv"), ["N", "crps_sum", "stderr"], rows)
    for row in rows:
        print(",".join(str(part) for part in row))
    return EXIT_OK


def cmd_schedule(args) -> int:
    sched = linear_schedule(args.steps, args.beta_start, args.beta_end)
    print("n,beta,alpha_bar,tilde_beta")
    for n, beta, alpha_bar, tilde_beta in sched.rows():
        print(f"{n},{_fmt(beta)},{_fmt(alpha_bar)},{_fmt(tilde_beta)}")
    return EXIT_OK


def cmd_make_data(args) -> int:
    ds = synthetic.make_dataset(args.kind, args.length, args.seed, freq=args.data_frequency)
    parent = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(parent, exist_ok=True)
    save_dataset(ds, args.out, args.format)
    print(f"wrote {args.out} ({ds.num_steps} steps, {ds.dim} entities, {ds.frequency})")
    return EXIT_OK


# -- argument wiring -------------------------------------------------------------


class _VersionAction(argparse.Action):
    """Multi-line version report; the stock action re-wraps whitespace."""

    def __call__(self, parser, namespace, values, option_string=None):
        print(f"diffcast {__version__}")
        print(f"checkpoint format {engine.CHECKPOINT_VERSION}")
        print(f"csv schema {CSV_SCHEMA_VERSION}")
        parser.exit(EXIT_OK)


def _add_common(sp) -> None:
    sp.add_argument("--config", help="INI config file")
    sp.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )
    sp.add_argument("--output", help="output directory (output.directory)")


def _add_dataset_flags(sp) -> None:
    sp.add_argument("--data", help="dataset path (dataset.path)")
    sp.add_argument("--format", choices=["csv_wide", "jsonlines"], help="dataset format")
    sp.add_argument("--frequency", help="override dataset frequency (day, hour, 30min)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffcast",
        description="Probabilistic multivariate forecasting with a diffusion head.",
        epilog=(
            "Config precedence: flags > DIFFCAST_SECTION__KEY environment "
            "variables > --config file > built-in defaults."
        ),
    )
    parser.add_argument("--version", action=_VersionAction, nargs=0, help="print format versions")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", help="train a model and write checkpoint + log")
    _add_common(sp)
    _add_dataset_flags(sp)
    sp.add_argument("--seed", type=int, help="training seed (train.seed)")
    sp.add_argument("--max-epochs", dest="max_epochs", type=int, help="epoch cap (train.max_epochs)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("forecast", help="sample trajectories from a checkpoint")
    _add_common(sp)
    _add_dataset_flags(sp)
    sp.add_argument("--checkpoint", required=True, help="checkpoint file from train")
    sp.add_argument("--samples", type=int, help="trajectory count (forecast.num_samples)")
    sp.add_argument("--seed", dest="forecast_seed", type=int, help="sampling seed (forecast.seed)")
    sp.add_argument("--horizon", type=int, help="predict only the first H steps")
    sp.set_defaults(func=cmd_forecast)

    sp = sub.add_parser("evaluate", help="score forecast samples against truth")
    _add_common(sp)
    _add_dataset_flags(sp)
    sp.add_argument("--samples-csv", dest="samples_csv", required=True, help="forecast_samples.csv path")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("ablate-n", help="sweep diffusion step counts")
    _add_common(sp)
    _add_dataset_flags(sp)
    sp.add_argument("--steps", type=lambda s: tuple(int(p) for p in s.split(",")), help="comma list of N values")
    sp.add_argument("--repeats", type=int, help="training repeats per N (ablation.repeats)")
    sp.add_argument("--seed", type=int, help="base training seed (train.seed)")
    sp.add_argument("--parallel", action="store_true", help="run cells in worker processes")
    sp.set_defaults(func=cmd_ablate_n)

    sp = sub.add_parser("schedule", help="print the noise schedule table")
    sp.add_argument("--steps", type=int, required=True, help="number of noise levels")
    sp.add_argument("--beta-start", dest="beta_start", type=float, default=1e-4)
    sp.add_argument("--beta-end", dest="beta_end", type=float, default=0.1)
    sp.set_defaults(func=cmd_schedule)

    sp = sub.add_parser("make-data", help="write a bundled synthetic dataset")
    sp.add_argument("--kind", required=True, choices=sorted(synthetic.GENERATORS))
    sp.add_argument("--length", type=int, default=400)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--frequency", dest="data_frequency", default="day")
    sp.add_argument("--format", choices=["csv_wide", "jsonlines"], default="csv_wide")
    sp.add_argument("--out", required=True, help="destination file")
    sp.set_defaults(func=cmd_make_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DiffcastError as exc:
        print(f"{_error_class(exc)}: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
