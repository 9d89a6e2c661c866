"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import load_config
from .dataset import TEST, ROLES, build_inference_sample, build_samples, fit_statistics, prepare_bundle
from .errors import InvalidArgumentError, TecFusionError, TrainingDivergedError
from .evaluation import METRIC_NAMES, evaluate, explain, write_explanation
from .grid import breakdown_csv, run_experiment_grid
from .ingest import TARGET_GROUPS, TARGET_SOURCE, SourceBundle, SyntheticSpec, format_timestamp, generate_synthetic
from .ingest import load_bundle, parse_timestamp, save_bundle
from .tft import as_batch, load_checkpoint, save_checkpoint
from .training import train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3

log = logging.getLogger("tecfusion")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def cmd_synth(args) -> int:
    spec = SyntheticSpec(seed=args.seed, days=args.days, start=args.start)
    bundle = generate_synthetic(spec)
    save_bundle(bundle, args.out)
    print(f"wrote synthetic bundle ({len(bundle.locations)} locations, {args.days} days) to {args.out}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    config = load_config(args.config)
    bundle = load_bundle(args.bundle)
    prepared = prepare_bundle(bundle, config)
    stats = fit_statistics(prepared, config)
    frames = dict(prepared.frames)
    frames[TARGET_SOURCE] = prepared.target
    out = Path(args.out)
    save_bundle(SourceBundle(frames, prepared.locations), out / "bundle")
    with open(out / "normalization.json", "w", encoding="utf-8") as fh:
        json.dump(stats.to_dict(), fh, indent=2)
    print(f"wrote processed bundle to {out / 'bundle'} and statistics to {out / 'normalization.json'}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.epochs:
        config = replace(config, training=replace(config.training, max_epochs=args.epochs))
    bundle = load_bundle(args.bundle)

    def progress(record):
        print(f"epoch {record['epoch']:3d}  train {record['train_loss']:.5f}  val {record['val_loss']:.5f}")

    result = train(config, bundle, progress)
    save_checkpoint(result.checkpoint, args.out)
    print(f"best epoch {result.best_epoch}; checkpoint written to {args.out} ({result.seconds:.1f} s)")
    return EXIT_OK


def _report_text(report) -> str:
    o = report.overall
    lines = [
        f"samples: {report.count}",
        f"MAE  mu, sigma (TECU): {o['mae_mean']:.4f}, {o['mae_std']:.4f}",
        f"RMSE mu, sigma (TECU): {o['rmse_mean']:.4f}, {o['rmse_std']:.4f}",
        "per horizon step (RMSE mu):",
    ]
    for h, m in enumerate(report.per_horizon, start=1):
        lines.append(f"  +{h * report.horizon_resolution // 60} min: {m['rmse_mean']:.4f}")
    for taxonomy, cells in report.breakdowns.items():
        lines.append(f"{taxonomy}:")
        for name, cell in cells.items():
            if cell["count"]:
                lines.append(
                    f"  {name}: n={cell['count']} MAE {cell['mae_mean']:.4f}, {cell['mae_std']:.4f}"
                    f" RMSE {cell['rmse_mean']:.4f}, {cell['rmse_std']:.4f}"
                )
            else:
                lines.append(f"  {name}: n=0")
    return "\n".join(lines)


def cmd_evaluate(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    report = evaluate(checkpoint, load_bundle(args.bundle), role=args.role)
    print(_report_text(report))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.json", "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
        with open(out / "per_horizon.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("step", "lead_seconds") + METRIC_NAMES)
            for h, m in enumerate(report.per_horizon, start=1):
                writer.writerow([h, h * report.horizon_resolution] + [f"{m[k]:.4f}" for k in METRIC_NAMES])
        (out / "breakdown.csv").write_text(breakdown_csv(report), encoding="utf-8")
    return EXIT_OK


def _location_index(locations, lat, lon) -> int:
    for k, (a, b) in enumerate(locations):
        if abs(a - lat) < 1e-6 and abs(b - lon) < 1e-6:
            return k
    raise InvalidArgumentError(f"({lat}, {lon}) is not a bundle location; available: {locations}")


def cmd_predict(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    config = checkpoint.config
    prepared = prepare_bundle(load_bundle(args.bundle), config)
    location = _location_index(prepared.locations, args.lat, args.lon)
    origin = parse_timestamp(args.origin)
    sample = build_inference_sample(prepared, config, checkpoint.stats, origin, location)
    pred = checkpoint.model().predict(checkpoint.params, as_batch([sample]))[0]
    quantiles = config.model.quantiles
    header = ["timestamp"] + [f"{g}_q{q:g}" for g in TARGET_GROUPS for q in quantiles]
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(header)
    for h in range(pred.shape[0]):
        ts = origin + (h + 1) * config.horizon_resolution
        row = [format_timestamp(ts)]
        for j, group in enumerate(TARGET_GROUPS):
            row += [f"{v:.4f}" for v in checkpoint.stats.invert(group, pred[h, j])]
        writer.writerow(row)
    return EXIT_OK


def cmd_explain(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    samples = build_samples(load_bundle(args.bundle), checkpoint.config, args.role, checkpoint.stats)
    result = explain(checkpoint, samples, max_samples=args.max_samples)
    write_explanation(result, args.out)
    ranked = sorted(result["mean_weights"]["encoder"].items(), key=lambda kv: -kv[1])
    for name, weight in ranked:
        print(f"{weight:.4f}  {name}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_grid(args) -> int:
    result = run_experiment_grid(args.config_dir, load_bundle(args.bundle), args.out)
    print((Path(args.out) / "table1.txt").read_text(encoding="utf-8"), end="")
    failed = [row.name for row in result.rows if not row.ok]
    if failed:
        print(f"failed configs: {', '.join(failed)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tecfusion", description="Multi-source vTEC forecasting with a Temporal Fusion Transformer")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic source bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", type=int, default=730)
    p.add_argument("--start", default="2014-01-01")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="resample and impute a bundle for a config; write it with normalizer stats")
    p.add_argument("config")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("config")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None, help="override max_epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint in TECU")
    p.add_argument("checkpoint")
    p.add_argument("--bundle", required=True)
    p.add_argument("--role", choices=ROLES, default=TEST)
    p.add_argument("--out", default=None, help="directory for metrics.json and CSV reports")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="forecast one location from one origin")
    p.add_argument("checkpoint")
    p.add_argument("--bundle", required=True)
    p.add_argument("--origin", required=True, help="YYYY-MM-DDTHH:MM:SSZ")
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="export attention and variable-selection weights")
    p.add_argument("checkpoint")
    p.add_argument("--bundle", required=True)
    p.add_argument("--role", choices=ROLES, default=TEST)
    p.add_argument("--max-samples", type=int, default=16)
    p.add_argument("--out", default="explain.json")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("grid", help="train and evaluate every config in a directory")
    p.add_argument("config_dir")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    np.seterr(over="ignore", under="ignore")
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TecFusionError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
