"""Command-line interface.

Subcommands: ingest, synth, train, detect (greysheep | outliers), predict,
evaluate, ablate.  Configuration comes from an optional JSON file with flag
overrides on top; --json switches any command to machine-readable output.
Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime/training error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import anomaly as anomaly_mod
from .data import (
    DataFormatError,
    DimensionError,
    GenerationError,
    SplitSpec,
    generate_synthetic,
    load_matrix,
    load_synthetic,
    load_wsdream,
    save_synthetic,
    split,
    summarize,
)
from .metrics import MetricError, confidence_table, improvement, mae as mae_fn, rmse as rmse_fn
from .nn import TrainingError
from .persist import load_bundle, save_bundle
from .pipeline import ArrqpConfig, PipelineError, artifact_dir, run_experiment, run_pipeline

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _emit(payload: dict, as_json: bool, lines=None) -> None:
    if as_json:
        print(json.dumps(payload, sort_keys=True))
    else:
        for line in lines if lines is not None else _default_lines(payload):
            print(line)


def _default_lines(payload: dict):
    return [f"{k}: {v}" for k, v in payload.items()]


# ---------------------------------------------------------------------------
# config assembly

_OVERRIDE_FIELDS = {
    "parameter_kind": str, "density": float, "seed": int,
    "d_n": int, "d_s": int, "d_c": int, "feature_mode": str,
    "model": str, "n_heads": int, "t": int, "gamma": float, "loss": str,
    "learning_rate": float, "max_epochs": int, "patience": int,
    "c": float, "lam": float, "runs": int,
    "head_max_epochs": int, "head_patience": int, "head_batch_size": int,
    "ae_max_epochs": int, "nmf_max_iters": int,
    "matrix_path": str, "user_list_path": str, "service_list_path": str,
    "cold_collab_mode": str, "outlier_trees": int, "outlier_subsample": int,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("--synthetic", help="inline synthetic spec as a JSON object")
    for name, typ in _OVERRIDE_FIELDS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", type=typ, dest=name)
    parser.add_argument("--greysheep-on-full-data", action="store_true", default=None,
                        dest="greysheep_on_full_data")


def _build_config(args: argparse.Namespace) -> ArrqpConfig:
    base = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            base = json.load(fh)
    if getattr(args, "synthetic", None):
        base["synthetic"] = json.loads(args.synthetic)
    for name in list(_OVERRIDE_FIELDS) + ["greysheep_on_full_data"]:
        value = getattr(args, name, None)
        if value is not None:
            base[name] = value
    return ArrqpConfig.from_json(base)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_ingest(args) -> int:
    dataset = load_wsdream(args.matrix, args.users, args.services,
                           parameter_kind=args.kind)
    stats = summarize(dataset)
    _emit(stats, args.json)
    return EXIT_OK


def _cmd_synth(args) -> int:
    dataset, truth = generate_synthetic(
        n=args.n, m=args.m, rank=args.rank, density=args.density,
        noise_std=args.noise_std, outlier_fraction=args.outlier_fraction,
        outlier_scale=args.outlier_scale, greysheep_users=args.greysheep_users,
        cold_users=args.cold_users, cold_services=args.cold_services,
        seed=args.seed, parameter_kind=args.kind,
    )
    save_synthetic(dataset, truth, args.out)
    payload = summarize(dataset)
    payload["planted_outliers"] = len(truth.outlier_cells)
    payload["planted_greysheep_users"] = len(truth.greysheep_users)
    payload["out"] = args.out
    _emit(payload, args.json)
    return EXIT_OK


def _strip_volatile(report: dict) -> dict:
    report = dict(report)
    report.pop("generated_at", None)
    return report


def _cmd_train(args) -> int:
    config = _build_config(args)
    result = run_experiment(config)
    bundle = result.pop("last_bundle")
    out_dir = args.out or os.path.join(artifact_dir(), config.fingerprint())
    save_bundle(bundle, out_dir)
    import time

    result["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
    result["bundle_dir"] = out_dir
    report_path = os.path.join(out_dir, "experiment.json")
    with open(report_path, "w") as fh:
        json.dump(result, fh, sort_keys=True)
    if args.json:
        print(json.dumps(result, sort_keys=True))
    else:
        print(f"bundle: {out_dir}")
        print(f"runs: {config.runs}")
        print(f"mean MAE: {result['mean_mae']:.6f}")
        print(f"mean RMSE: {result['mean_rmse']:.6f}")
        if "confidence_intervals" in result:
            for level, (lo, hi) in sorted(result["confidence_intervals"]["mae"].items()):
                print(f"MAE {level}% CI: ({lo:.6f}, {hi:.6f})")
    return EXIT_OK


def _load_matrix_arg(args):
    if getattr(args, "data", None):
        dataset, _ = load_synthetic(args.data)
        return dataset.matrix, dataset
    if getattr(args, "matrix", None):
        return load_matrix(args.matrix), None
    raise _UsageError("provide --matrix or --data")


def _cmd_detect_greysheep(args) -> int:
    matrix, _ = _load_matrix_arg(args)
    if args.density is not None:
        from .data import Dataset, ContextTable

        rows = matrix.n_users
        cols = matrix.n_services
        dummy_u = ContextTable("user", tuple(map(str, range(rows))),
                               np.zeros(rows, int), np.zeros(rows, int), 1, 1)
        dummy_s = ContextTable("service", tuple(map(str, range(cols))),
                               np.zeros(cols, int), np.zeros(cols, int), 1, 1)
        dataset = Dataset(matrix, dummy_u, dummy_s)
        matrix, _, _ = split(dataset, SplitSpec(train_fraction=args.density, seed=args.seed))
    ga = anomaly_mod.ga_scores(matrix)
    report = anomaly_mod.detect_greysheep(ga, args.c)
    payload = report.to_json()
    _emit(payload, args.json, lines=[
        f"user threshold: {report.user_threshold!r}",
        f"service threshold: {report.service_threshold!r}",
        f"greysheep users ({len(report.gsu)}): {list(report.gsu)}",
        f"greysheep services ({len(report.gss)}): {list(report.gss)}",
    ])
    return EXIT_OK


def _cmd_detect_outliers(args) -> int:
    matrix, _ = _load_matrix_arg(args)
    report = anomaly_mod.score_outliers(
        matrix, n_trees=args.trees, subsample_size=args.subsample, seed=args.seed
    )
    cleaned, report = anomaly_mod.remove_outliers(matrix, report, args.lam)
    payload = {
        "n_scored": int(report.scores.size),
        "n_removed": len(report.removed),
        "lambda": args.lam,
        "removed": [list(c) for c in report.removed],
    }
    if args.out:
        from .data import save_matrix

        save_matrix(cleaned, args.out)
        payload["out"] = args.out
    _emit(payload, args.json, lines=[
        f"scored entries: {payload['n_scored']}",
        f"removed: {payload['n_removed']} (lambda={args.lam})",
    ] + ([f"cleaned matrix written to {args.out}"] if args.out else []))
    return EXIT_OK


def _cmd_predict(args) -> int:
    bundle = load_bundle(args.bundle)
    pairs = []
    if args.pairs:
        with open(args.pairs) as fh:
            reader = csv.reader(fh)
            for row in reader:
                if not row or row[0].strip().lower() in ("user", "user_id"):
                    continue
                pairs.append((int(row[0]), int(row[1])))
    elif args.user is not None and args.service is not None:
        pairs.append((args.user, args.service))
    else:
        raise _UsageError("provide --user and --service, or --pairs")

    results = []
    for u, s in pairs:
        value, decision = bundle.predict(u, s)
        results.append({
            "user": u, "service": s, "predicted": value,
            "route": decision.route, "category": decision.category,
        })
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user_id", "service_id", "predicted", "route", "category"])
            for r in results:
                writer.writerow([r["user"], r["service"], repr(r["predicted"]),
                                 r["route"], r["category"] or ""])
    _emit({"predictions": results}, args.json, lines=[
        f"({r['user']}, {r['service']}) -> {r['predicted']:.6f} via {r['route']}"
        + (f"[{r['category']}]" if r["category"] else "")
        for r in results
    ])
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    actual, predicted = [], []
    with open(args.predictions) as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            a = row.get("actual")
            if a in (None, ""):
                continue
            actual.append(float(a))
            predicted.append(float(row["predicted"]))
    if not actual:
        raise DataFormatError(f"{args.predictions}: no rows with actual values")
    actual = np.asarray(actual)
    predicted = np.asarray(predicted)
    payload = {
        "n_pairs": int(actual.size),
        "mae": mae_fn(actual, predicted),
        "rmse": rmse_fn(actual, predicted),
    }
    lines = [
        f"pairs: {payload['n_pairs']}",
        f"MAE: {payload['mae']:.6f}",
        f"RMSE: {payload['rmse']:.6f}",
    ]
    if args.baseline_mae is not None:
        payload["improvement_mae"] = improvement(payload["mae"], args.baseline_mae)
        lines.append(f"improvement over baseline MAE: {payload['improvement_mae']:.2f}%")
    if args.baseline_rmse is not None:
        payload["improvement_rmse"] = improvement(payload["rmse"], args.baseline_rmse)
        lines.append(f"improvement over baseline RMSE: {payload['improvement_rmse']:.2f}%")
    if args.runs_file:
        with open(args.runs_file) as fh:
            run_values = json.load(fh)
        cis = confidence_table(run_values)
        payload["confidence_intervals"] = {
            str(level): [ci.lower, ci.upper] for level, ci in cis.items()
        }
        for level, ci in sorted(cis.items()):
            lines.append(f"{level}% CI: ({ci.lower:.6f}, {ci.upper:.6f})")
    _emit(payload, args.json, lines=lines)
    return EXIT_OK


def _cmd_ablate(args) -> int:
    config = _build_config(args)
    rows = []
    if args.sweep:
        values = [float(v) for v in args.values.split(",")]
        for value in values:
            if args.sweep == "density":
                variant = ArrqpConfig.from_json({**config.to_json(), "density": value})
            elif args.sweep == "gamma":
                variant = ArrqpConfig.from_json({**config.to_json(), "gamma": value})
            elif args.sweep == "heads":
                variant = ArrqpConfig.from_json({**config.to_json(), "n_heads": int(value)})
            else:
                raise _UsageError(f"unknown sweep {args.sweep!r}")
            bundle = run_pipeline(variant)
            rows.append({args.sweep: value, "mae": bundle.report["mae"],
                         "rmse": bundle.report["rmse"]})
    elif args.study == "features":
        for mode in ("contextual", "qos", "combined"):
            variant = ArrqpConfig.from_json({**config.to_json(), "feature_mode": mode})
            bundle = run_pipeline(variant)
            rows.append({"variant": mode, "mae": bundle.report["mae"],
                         "rmse": bundle.report["rmse"]})
    elif args.study == "models":
        variants = [
            ("single_head", {"model": "mhgcmf", "n_heads": 1}),
            ("multi_head", {"model": "mhgcmf", "n_heads": max(config.n_heads, 2)}),
            ("multi_head_attention", {"model": "mhgat", "n_heads": max(config.n_heads, 2)}),
        ]
        for name, over in variants:
            variant = ArrqpConfig.from_json({**config.to_json(), **over})
            bundle = run_pipeline(variant)
            rows.append({"variant": name, "mae": bundle.report["mae"],
                         "rmse": bundle.report["rmse"]})
    else:
        raise _UsageError("provide --study features|models or --sweep density|gamma|heads")

    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    _emit({"rows": rows}, args.json, lines=[
        "  ".join(f"{k}={v}" for k, v in row.items()) for row in rows
    ])
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="arrqp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a dataset and print its summary")
    p.add_argument("--matrix", required=True)
    p.add_argument("--users", required=True)
    p.add_argument("--services", required=True)
    p.add_argument("--kind", default="RT", choices=["RT", "TP"])
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic dataset with planted anomalies")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--density", type=float, default=0.2)
    p.add_argument("--noise-std", type=float, default=0.01)
    p.add_argument("--outlier-fraction", type=float, default=0.0)
    p.add_argument("--outlier-scale", type=float, default=100.0)
    p.add_argument("--greysheep-users", type=int, default=0)
    p.add_argument("--cold-users", type=int, default=0)
    p.add_argument("--cold-services", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", default="RT", choices=["RT", "TP"])
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="run the full pipeline and persist the bundle")
    _add_config_flags(p)
    p.add_argument("--out", help="bundle directory (default: artifact cache)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("detect", help="run one anomaly detector")
    det = p.add_subparsers(dest="detector", required=True)

    g = det.add_parser("greysheep")
    g.add_argument("--matrix", help="plain-text QoS matrix")
    g.add_argument("--data", help="synthetic dataset JSON")
    g.add_argument("--c", type=float, default=2.0)
    g.add_argument("--density", type=float, default=None,
                   help="detect on a training split of this percentage instead of full data")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--json", action="store_true")
    g.set_defaults(func=_cmd_detect_greysheep)

    o = det.add_parser("outliers")
    o.add_argument("--matrix")
    o.add_argument("--data")
    o.add_argument("--lam", type=float, default=0.1)
    o.add_argument("--trees", type=int, default=100)
    o.add_argument("--subsample", type=int, default=256)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", help="write the cleaned matrix here")
    o.add_argument("--json", action="store_true")
    o.set_defaults(func=_cmd_detect_outliers)

    p = sub.add_parser("predict", help="predict QoS for pairs from a saved bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--user", type=int)
    p.add_argument("--service", type=int)
    p.add_argument("--pairs", help="CSV of user,service rows")
    p.add_argument("--out", help="write predictions CSV here")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score a predictions CSV")
    p.add_argument("--predictions", required=True,
                   help="CSV with predicted and actual columns")
    p.add_argument("--baseline-mae", type=float)
    p.add_argument("--baseline-rmse", type=float)
    p.add_argument("--runs-file", help="JSON list of per-run metric values for CIs")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate", help="feature/model ablations and parameter sweeps")
    _add_config_flags(p)
    p.add_argument("--study", choices=["features", "models"])
    p.add_argument("--sweep", choices=["density", "gamma", "heads"])
    p.add_argument("--values", help="comma-separated sweep values")
    p.add_argument("--out", help="write a plot-ready CSV here")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, DimensionError, GenerationError, MetricError,
            FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, PipelineError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
