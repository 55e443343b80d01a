#!/usr/bin/env python3
"""
MixSurv command-line entry point.

Usage:
    python execution/cli.py synth-validate --function linear --p 1 --out-dir runs/synth
    python execution/cli.py train --data data.csv --schema data.schema.json --out-dir runs/train
    python execution/cli.py predict --model runs/train/model.npz --data new.csv --horizons 50,100
    python execution/cli.py sensitivity --data data.csv --schema data.schema.json --quantiles 1.0,0.5,0.25
    python execution/cli.py synth-export --function cubic --p 2 --out synth.csv

Exit statuses:
    0 success, 2 configuration error, 3 data error, 4 training diverged,
    5 synthetic acceptance failed
"""

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional

# Load environment variables from .env file
from dotenv import load_dotenv
load_dotenv()

# Add execution directory to path for imports
sys.path.insert(0, str(Path(__file__).parent))

import numpy as np
import pandas as pd
from pydantic import ValidationError

from config_loader import format_config_header, load_train_config, log_level
from mixsurv.dataio import load_csv
from mixsurv.errors import (
    ConfigError,
    DataError,
    DomainError,
    ModelFileError,
    ShapeMismatchError,
    TrainingDivergedError,
    UndefinedMetricError,
)
from mixsurv.metrics import predict_mean_lifetime, prepare_covariates, survival_at_horizon
from mixsurv.models import DatasetSchema, FunctionId, GeneratorSpec, RankingStatistic, TrainConfig
from mixsurv.neuralnet import load_model, predict_params, save_model
from mixsurv.synthgen import export_csv, generate
from mixsurv.workflows import cross_validate, sensitivity_sweep, synth_validate

logger = logging.getLogger("mixsurv.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_ACCEPTANCE = 5

DEFAULT_QUANTILES = "0.5,0.45,0.35,0.25"
FLOAT_FORMAT = "%.17g"
ALL_FUNCTIONS = "all"


# ============================================
# HELPERS
# ============================================

def parse_floats(text: Optional[str], flag: str) -> List[float]:
    if text is None or not text.strip():
        return []
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"{flag} must be a comma-separated list of numbers, got {text!r}")


def horizon_columns(horizons: List[float]) -> List[str]:
    """Column name per horizon; full precision when the short names would collide."""
    if len(set(horizons)) != len(horizons):
        raise ConfigError(f"--horizons repeats a value: {horizons}")
    names = [f"survival@{h:g}" for h in horizons]
    if len(set(names)) != len(names):
        names = [f"survival@{h!r}" for h in horizons]
    return names


def write_report(frame: pd.DataFrame, path: Path, config: Optional[TrainConfig] = None) -> Path:
    """CSV with the effective config echoed as '#' header lines."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config is not None:
            fh.write(format_config_header(config))
        frame.to_csv(fh, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def resolve_schema(schema_path: Optional[str], config: Optional[TrainConfig] = None) -> DatasetSchema:
    path = schema_path or (config.schema_path if config else None)
    if not path:
        raise ConfigError("No dataset schema: pass --schema or set schema_path in the config file")
    if not Path(path).is_file():
        raise ConfigError(f"Schema file not found: {path}")
    try:
        return DatasetSchema.from_file(Path(path))
    except ValueError as e:
        raise ConfigError(f"Invalid schema {path}: {e}")


def build_config(args) -> TrainConfig:
    return load_train_config(args.config, {"seed": args.seed, "p": getattr(args, "p", None)})


# ============================================
# COMMANDS
# ============================================

def cmd_synth_validate(args) -> int:
    config = build_config(args)
    if args.function == ALL_FUNCTIONS:
        cases = [(f, p) for f in FunctionId for p in (1, 2)]
    else:
        cases = [(FunctionId(args.function), args.p or config.p)]

    reports = [synth_validate(function_id, p, config, n=args.n) for function_id, p in cases]
    frame = pd.DataFrame([
        {
            "function": r.function_id.value,
            "p": r.p,
            "n_test": r.n_test,
            "nll_pred": r.nll_pred,
            "nll_real": r.nll_real,
            "relative_gap": r.relative_gap,
            "passed": int(r.passed(config.acceptance_gap)),
        }
        for r in reports
    ])
    path = write_report(frame, Path(args.out_dir) / "report.csv", config)

    for r in reports:
        status = "PASS" if r.passed(config.acceptance_gap) else "FAIL"
        print(f"{r.function_id.value} p={r.p}: -LL_pred={r.nll_pred:.4f} -LL_real={r.nll_real:.4f} "
              f"gap={r.relative_gap:.2%} {status}")
    print(f"Report written to {path}")
    return EXIT_OK if all(r.passed(config.acceptance_gap) for r in reports) else EXIT_ACCEPTANCE


def cmd_train(args) -> int:
    config = build_config(args)
    schema = resolve_schema(args.schema, config)
    dataset = load_csv(args.data, schema)
    result = cross_validate(dataset, config, schema=schema)
    out_dir = Path(args.out_dir)

    scores = pd.DataFrame({
        "fold": [f"{f.index}" for f in result.folds] + ["mean", "lower", "upper"],
        "c_index": [f.c_index for f in result.folds]
        + [result.report.mean, result.report.lower, result.report.upper],
    })
    write_report(scores, out_dir / "report.csv", config)

    traces = pd.DataFrame([
        {"fold": f.index, "epoch": epoch, "train_nll": train_nll, "val_nll": val_nll}
        for f in result.folds
        for epoch, (train_nll, val_nll) in enumerate(zip(f.trace.train_nll, f.trace.val_nll))
    ])
    write_report(traces, out_dir / "loss_trace.csv", config)

    best = result.best_fold
    model_path = save_model(best.model, out_dir / "model.npz")
    print(f"C-index {result.report.format_table()} over {len(result.folds)} folds")
    print(f"Best fold {best.index} (C-index {best.c_index:.4f}) saved to {model_path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    horizons = parse_floats(args.horizons, "--horizons")
    names = horizon_columns(horizons)
    model = load_model(args.model)
    schema = resolve_schema(args.schema) if args.schema else model.dataset_schema
    if schema is None:
        raise ConfigError("The model file stores no dataset schema: pass --schema")

    dataset = load_csv(args.data, schema)
    x = prepare_covariates(model, dataset)
    columns = {"row": np.arange(1, len(dataset) + 1), "mean_lifetime": predict_mean_lifetime(model, x)}
    for name, h in zip(names, horizons):
        columns[name] = survival_at_horizon(model, x, h)
    if args.with_params:
        params = predict_params(model, x)
        for k in range(params.p):
            columns[f"alpha_{k}"] = params.alpha[:, k]
            columns[f"beta_{k}"] = params.beta[:, k]
            columns[f"eta_{k}"] = params.eta[:, k]

    path = write_report(pd.DataFrame(columns), Path(args.out_dir) / "predictions.csv")
    print(f"{len(dataset)} predictions written to {path}")
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    config = build_config(args)
    if args.synthetic:
        dataset, _ = generate(GeneratorSpec(
            function_id=FunctionId(args.synthetic), p=args.p or config.p, n=args.n, seed=config.seed,
        ))
    elif args.data:
        dataset = load_csv(args.data, resolve_schema(args.schema, config))
    else:
        raise ConfigError("sensitivity needs --data or --synthetic")

    quantiles = parse_floats(args.quantiles, "--quantiles")
    if not quantiles or any(not 0.0 < q <= 1.0 for q in quantiles):
        raise ConfigError("--quantiles must be in (0, 1]; 1.0 keeps the data unmodified")
    horizons = parse_floats(args.horizons, "--horizons")
    if not horizons:
        horizons = [float(h) for h in np.quantile(dataset.times, (0.25, 0.5, 0.75))]

    rows = sensitivity_sweep(
        dataset, config, quantiles, horizons,
        statistic=RankingStatistic(args.statistic),
        horizon_restricted=args.horizon_restricted,
    )
    frame = pd.DataFrame([asdict(row) for row in rows])
    path = write_report(frame, Path(args.out_dir) / "report.csv", config)
    for q in quantiles:
        mean = np.nanmean([r.c_index for r in rows if r.quantile == q])
        print(f"quantile {q:g}: average C-index {mean:.4f}")
    print(f"Report written to {path}")
    return EXIT_OK


def cmd_synth_export(args) -> int:
    config = build_config(args)
    dataset, truth = generate(GeneratorSpec(
        function_id=FunctionId(args.function), p=args.p or config.p, n=args.n, seed=config.seed,
    ))
    csv_path, schema_path = export_csv(dataset, args.out)
    print(f"Wrote {len(dataset)} records to {csv_path} (schema {schema_path}, t_c={truth.censoring.t_c:.6g})")
    return EXIT_OK


# ============================================
# ARGUMENTS
# ============================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Weibull-mixture survival regression")
    parser.add_argument("--log-level", help="Logging level (or set MIXSURV_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_dir: bool = True):
        p.add_argument("--config", help="KEY=value training config (or set MIXSURV_CONFIG)")
        p.add_argument("--seed", type=int, help="Overrides the config seed")
        p.add_argument("--p", type=int, help="Number of mixture components")
        if out_dir:
            p.add_argument("--out-dir", default=".", help="Directory for report files")

    functions = [f.value for f in FunctionId]

    p = sub.add_parser("synth-validate", help="Train on synthetic data and compare -LL_pred with -LL_real")
    common(p)
    p.add_argument("--function", choices=functions + [ALL_FUNCTIONS], default=FunctionId.LINEAR.value)
    p.add_argument("--n", type=int, default=10000)
    p.set_defaults(handler=cmd_synth_validate)

    p = sub.add_parser("train", help="k-fold cross-validation; saves the best fold's model")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--schema")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", help="Mean lifetime and horizon survival per record")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", help="Defaults to the schema stored in the model file")
    p.add_argument("--horizons", default="", help="Comma-separated t_STH values")
    p.add_argument("--with-params", action="store_true", help="Add per-component alpha, beta, eta columns")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("sensitivity", help="Average horizon C-index per censoring threshold")
    common(p)
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--synthetic", choices=functions, help="Use a generated dataset instead of --data")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--quantiles", default=DEFAULT_QUANTILES)
    p.add_argument("--horizons", help="Comma-separated t_STH grid (default: time quartiles)")
    p.add_argument("--statistic", choices=[s.value for s in RankingStatistic], default=RankingStatistic.SURVIVAL.value)
    p.add_argument("--horizon-restricted", action="store_true")
    p.set_defaults(handler=cmd_sensitivity)

    p = sub.add_parser("synth-export", help="Write a synthetic dataset and its schema")
    common(p, out_dir=False)
    p.add_argument("--function", choices=functions, default=FunctionId.LINEAR.value)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--out", required=True, help="CSV path; the schema goes next to it")
    p.set_defaults(handler=cmd_synth_export)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or log_level()).upper(),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except (ConfigError, ValidationError) as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ModelFileError, DomainError, ShapeMismatchError, UndefinedMetricError) as e:
        print(f"Data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as e:
        print(f"Training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
