"""Command-line entry points for reproducible preprocessing, detection,
simulation, calibration, and reporting runs.

Every command writes a manifest (arguments, config snapshot, seed, input
digests, timestamps, output paths) into its output directory; statistical
outputs are byte-identical across reruns with equal manifest inputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import hashlib
import json
import os
import sys

import numpy as np
import yaml

from . import __version__
from ._rng import REF_STREAM, seed_sequence
from .detectors import (
    METHOD_NAMES,
    DetectorSpec,
    divergence_reference,
    make_scorer,
)
from .errors import ConfigError, DayChangeError
from .inference import NullCache, build_null, calibrate_effect, select_phi
from .model import ScenarioSpec, scenario_null_sampler
from .pipeline import online, preprocess, report
from .pipeline.io import (
    fmt17,
    read_detection_log,
    write_detection_log,
    write_feature_csv,
    write_table,
)
from .simulate import (
    RESULT_COLUMNS,
    effective_db,
    power_grid,
    estimator_grid,
    read_scenarios,
    run_simulation,
)

CONFIG_SCHEMA_VERSION = 1

DEFAULT_CONFIG = {
    "schema_version": CONFIG_SCHEMA_VERSION,
    "seed": 0,
    "threads": 0,  # 0 = all available cores
    "alpha": 0.05,
    "reps": 1000,
    "b": 1000,
    "method": "vcstar",
    "phi": "auto",
    "db": 7,
    "preprocess": {
        "int_offset": 0.375,
        "ridge_lambda": 10.0,
        "min_length": 14,
        "max_consecutive_missing": 3,
        "causal": False,
    },
    "cusum": {"a": None, "baseline": "prewindow", "convention": "crosier"},
    "divergence": {"inner_b": None, "smoothed": False},
}


def load_config(path: str | None) -> dict:
    config = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path is None:
        return config
    with open(path) as fh:
        user = yaml.safe_load(fh) or {}
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    version = user.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(
            f"{path}: unsupported schema_version {version} "
            f"(expected {CONFIG_SCHEMA_VERSION})"
        )
    for key, value in user.items():
        if key not in config:
            raise ConfigError(f"{path}: unknown config key {key!r}")
        if isinstance(config[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: {key} must be a mapping")
            for sub, subval in value.items():
                if sub not in config[key]:
                    raise ConfigError(f"{path}: unknown config key {key}.{sub}")
                config[key][sub] = subval
        else:
            config[key] = value
    return config


def override(config: dict, args, mapping: dict) -> dict:
    for flag, key in mapping.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = value
    return config


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


class Manifest:
    """Run record written alongside every command's outputs."""

    def __init__(self, command: str, args: argparse.Namespace, config: dict):
        self.data = {
            "command": command,
            "argv": sys.argv[1:],
            "code_version": __version__,
            "config": config,
            "seed": config.get("seed"),
            "inputs": {},
            "outputs": [],
            "notes": {},
            "started_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        }

    def add_input(self, path: str):
        self.data["inputs"][path] = sha256_file(path)

    def add_output(self, path: str):
        self.data["outputs"].append(path)

    def note(self, key: str, value):
        self.data["notes"][key] = value

    def write(self, out_dir: str):
        self.data["finished_utc"] = datetime.datetime.now(
            datetime.timezone.utc
        ).isoformat()
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        return path


def detector_from_config(config: dict, method: str, phi: float) -> DetectorSpec:
    return DetectorSpec(
        method=method,
        phi=phi,
        cusum_a=config["cusum"]["a"],
        cusum_baseline=config["cusum"]["baseline"],
        cusum_convention=config["cusum"]["convention"],
        divergence_b=config["divergence"]["inner_b"],
        smoothed=config["divergence"]["smoothed"],
    )


def _n_jobs(config: dict) -> int:
    threads = config.get("threads", 0)
    if threads in (0, None, "auto"):
        return os.cpu_count() or 1
    return int(threads)


def _ensure_out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


# ---------------------------------------------------------------- commands


def cmd_preprocess(args) -> int:
    config = override(
        load_config(args.config), args,
        {
            "seed": "seed",
            "ridge_lambda": "preprocess.ridge_lambda",
            "int_offset": "preprocess.int_offset",
            "min_length": "preprocess.min_length",
            "max_consecutive_missing": "preprocess.max_consecutive_missing",
            "causal": "preprocess.causal",
        },
    )
    out = _ensure_out(args)
    manifest = Manifest("preprocess", args, config)
    manifest.add_input(args.input)
    stream = preprocess.ingest(args.input)
    spec = preprocess.SegmentSpec(
        max_consecutive_missing=config["preprocess"]["max_consecutive_missing"],
        min_length=config["preprocess"]["min_length"],
    )
    segments = preprocess.segment(stream, spec)
    pcfg = preprocess.PreprocessConfig(
        int_offset=config["preprocess"]["int_offset"],
        ridge_lambda=config["preprocess"]["ridge_lambda"],
        causal=config["preprocess"]["causal"],
    )
    if args.tune_lambda:
        grid = [float(x) for x in args.tune_lambda.split(",")]
        best, rows = preprocess.tune_ridge_lambda(segments, grid, pcfg)
        table = os.path.join(out, "lambda_scan.csv")
        write_table(
            [{"ridge_lambda": lam, "mean_abs_autocorr": s} for lam, s in rows],
            table, ["ridge_lambda", "mean_abs_autocorr"],
        )
        manifest.add_output(table)
        manifest.note("tuned_ridge_lambda", best)
        pcfg = dataclasses.replace(pcfg, ridge_lambda=best)
    stem = os.path.splitext(os.path.basename(args.input))[0]
    report_rows = []
    for i, seg in enumerate(segments, start=1):
        pre = preprocess.preprocess_segment(seg, pcfg)
        path = os.path.join(out, f"{stem}_segment{i}.csv")
        write_feature_csv(pre.matrix, path)
        manifest.add_output(path)
        report_rows.append(
            {
                "segment": i,
                "start_day": int(seg.day_index[0]),
                "end_day": int(seg.day_index[-1]),
                "n_days": pre.n_days_incl_imputed,
                "n_imputed_cells": int(pre.imputed.sum()),
                "file": os.path.basename(path),
            }
        )
    observed_days = int(stream.missing_mask.any(axis=0).sum())
    kept = sum(r["n_days"] for r in report_rows)
    seg_report = os.path.join(out, f"{stem}_segments.csv")
    write_table(
        report_rows, seg_report,
        ["segment", "start_day", "end_day", "n_days", "n_imputed_cells", "file"],
    )
    manifest.add_output(seg_report)
    manifest.note("segments_kept", len(segments))
    manifest.note("days_in_stream", stream.n_days)
    manifest.note("observed_days_dropped", observed_days - kept if kept <= observed_days else 0)
    manifest.write(out)
    if not segments:
        print(
            f"warning: no segment of {spec.min_length}+ days found in "
            f"{args.input}; nothing written",
            file=sys.stderr,
        )
    else:
        print(f"wrote {len(segments)} segment(s) to {out}")
    return 0


def cmd_detect(args) -> int:
    config = override(
        load_config(args.config), args,
        {
            "seed": "seed", "alpha": "alpha", "b": "b", "method": "method",
            "phi": "phi", "threads": "threads",
        },
    )
    out = _ensure_out(args)
    manifest = Manifest("detect", args, config)
    cache = NullCache(args.cache) if args.cache else None
    logs = []
    start_dates = {}
    for path in args.input:
        manifest.add_input(path)
        seg = preprocess.ingest(path)
        if not seg.fully_observed:
            raise DayChangeError(
                f"{path}: detection input must be fully observed residuals"
            )
        stream_id = os.path.splitext(os.path.basename(path))[0]
        phi_setting = config.get("phi", "auto")
        if seg.n_features > seg.n_days:
            # more features than days forces full regularization
            phi = 1.0
            manifest.note(f"phi_forced_p_gt_T:{stream_id}", 1.0)
        elif phi_setting == "auto":
            phi = 1.0  # run select-phi for a data-driven value
            manifest.note(f"phi_default:{stream_id}", 1.0)
        else:
            phi = float(phi_setting)
        det = detector_from_config(config, config["method"], phi)
        log = online.online_detect(
            seg, det, alpha=config["alpha"], B=config["b"],
            seed=config["seed"], stream_id=stream_id, cache=cache,
        )
        logs.append(log)
        if seg.start_date is not None:
            start_dates[stream_id] = seg.start_date
    log_path = os.path.join(out, "detections.csv")
    write_detection_log(logs, log_path, start_dates)
    manifest.add_output(log_path)
    manifest.note("n_detections", sum(len(l.entries) for l in logs))
    manifest.write(out)
    print(
        f"{sum(len(l.entries) for l in logs)} detection(s) across "
        f"{len(logs)} stream(s) -> {log_path}"
    )
    return 0


def cmd_simulate(args) -> int:
    config = override(
        load_config(args.config), args,
        {"seed": "seed", "alpha": "alpha", "b": "b", "reps": "reps",
         "threads": "threads"},
    )
    if config["reps"] < 1:
        raise DayChangeError(f"reps={config['reps']} must be positive")
    out = _ensure_out(args)
    manifest = Manifest("simulate", args, config)
    if args.grid:
        manifest.add_input(args.grid)
        scenarios = read_scenarios(args.grid)
    elif args.preset == "power":
        scenarios = power_grid(config["seed"])
    elif args.preset == "estimators":
        scenarios = estimator_grid(config["seed"])
    else:
        raise DayChangeError("simulate needs --grid or --preset")
    methods = args.methods.split(",") if args.methods else ["vcstar"]
    rows = run_simulation(
        scenarios, methods,
        reps=config["reps"], B=config["b"], alpha=config["alpha"],
        seed=config["seed"], n_jobs=_n_jobs(config),
        fixed_effect=args.effect,
        calibration_reps=args.calibration_reps,
    )
    table = os.path.join(out, "power.csv")
    write_table(rows, table, RESULT_COLUMNS)
    manifest.add_output(table)
    manifest.note("n_rows", len(rows))
    manifest.write(out)
    print(f"{len(rows)} power rows -> {table}")
    return 0


def cmd_calibrate(args) -> int:
    config = override(
        load_config(args.config), args,
        {"seed": "seed", "alpha": "alpha", "b": "b", "reps": "reps"},
    )
    out = _ensure_out(args)
    manifest = Manifest("calibrate", args, config)
    template = ScenarioSpec(
        T=args.t, p=args.p, k_star=args.k_star, rho=args.rho,
        change_kind=args.kind, effect=0.0, omega=args.omega,
        phi=args.phi if args.phi is not None else 1.0, seed=config["seed"],
    )
    result = calibrate_effect(
        template, args.kind, target_power=args.target,
        alpha=config["alpha"], reps=config["reps"], B=config["b"],
        seed=config["seed"], db=effective_db(args.t, config["db"]),
        n_jobs=_n_jobs(config),
    )
    table = os.path.join(out, "calibration.csv")
    write_table(
        [
            {
                "T": args.t, "p": args.p, "k_star": args.k_star,
                "rho": args.rho, "change_kind": args.kind,
                "omega": args.omega, "phi": template.phi,
                "effect": result.effect, "power": result.power.power,
                "se": result.power.se,
            }
        ],
        table,
        ["T", "p", "k_star", "rho", "change_kind", "omega", "phi",
         "effect", "power", "se"],
    )
    manifest.add_output(table)
    manifest.write(out)
    print(
        f"calibrated effect {fmt17(result.effect)} "
        f"(power {result.power.power:.3f} +- {result.power.se:.3f}) -> {table}"
    )
    return 0


def cmd_select_phi(args) -> int:
    config = override(
        load_config(args.config), args,
        {"seed": "seed", "alpha": "alpha", "b": "b", "reps": "reps"},
    )
    out = _ensure_out(args)
    manifest = Manifest("select-phi", args, config)
    manifest.add_input(args.input)
    pre = preprocess.ingest(args.input)
    if not pre.fully_observed:
        raise DayChangeError(f"{args.input}: pre-change input must be observed")
    selection = select_phi(
        pre.values, shape=(args.t, pre.n_features), seed=config["seed"],
        alpha=config["alpha"], B=config["b"], reps=config["reps"],
        n_jobs=_n_jobs(config),
    )
    table = os.path.join(out, "phi.csv")
    write_table(
        [
            {"iteration": i + 1, "phi": phi}
            for i, phi in enumerate(selection.selections)
        ]
        + [{"iteration": "selected", "phi": selection.phi}],
        table, ["iteration", "phi"],
    )
    manifest.add_output(table)
    manifest.note("phi", selection.phi)
    manifest.note(
        "forced_p_gt_T", pre.n_features > args.t and not selection.selections
    )
    manifest.write(out)
    print(f"selected phi = {selection.phi} -> {table}")
    return 0


def cmd_null_dist(args) -> int:
    config = override(
        load_config(args.config), args,
        {"seed": "seed", "b": "b", "method": "method", "threads": "threads"},
    )
    out = _ensure_out(args)
    manifest = Manifest("null-dist", args, config)
    spec = ScenarioSpec(
        T=args.t, p=args.p, k_star=2, rho=args.rho, change_kind="none",
        effect=0.0, omega=1.0, phi=args.phi, seed=config["seed"],
    )
    db = args.db if args.db else effective_db(args.t, config["db"])
    det = detector_from_config(config, config["method"], args.phi)
    reference = None
    if det.method == "divergence":
        reference = divergence_reference(
            scenario_null_sampler(spec), db, config["b"],
            seed_sequence(config["seed"], REF_STREAM),
        )
    scorer = make_scorer(det, db, reference=reference)
    nd = build_null(
        scorer, (args.t, args.p), scenario_null_sampler(spec),
        config["b"], config["seed"], n_jobs=_n_jobs(config),
    )
    cache = NullCache(out)
    path = cache.put(nd)
    manifest.add_output(path)
    manifest.note("config_digest", nd.config_digest)
    manifest.write(out)
    print(f"null distribution ({nd.B} samples) -> {path}")
    return 0


def cmd_report(args) -> int:
    config = override(load_config(args.config), args, {"seed": "seed"})
    out = _ensure_out(args)
    manifest = Manifest("report", args, config)
    wrote_something = False
    if args.logs:
        # regroup log files into one DetectionLog per (method, stream)
        per_method_stream: dict[tuple, online.DetectionLog] = {}
        stream_ids = set()
        for path in args.logs:
            manifest.add_input(path)
            for log in read_detection_log(path):
                stream_ids.add(log.stream_id)
                for entry in log.entries:
                    key = (entry.method, log.stream_id)
                    sub = per_method_stream.setdefault(
                        key, online.DetectionLog(stream_id=log.stream_id)
                    )
                    sub.entries.append(entry)
        methods = sorted({m for m, _ in per_method_stream})
        days = _load_day_counts(args, stream_ids)
        rate_rows = []
        for method in methods:
            for sid in sorted(stream_ids):
                log = per_method_stream.get(
                    (method, sid), online.DetectionLog(stream_id=sid)
                )
                if sid not in days:
                    continue
                rate_rows.append(
                    {
                        "stream_id": sid, "method": method,
                        "n_detections": len(log.entries),
                        "n_days": days[sid],
                        "rate": report.changepoint_rate(log, days[sid]),
                    }
                )
        rates_path = os.path.join(out, "rates.csv")
        write_table(
            rate_rows, rates_path,
            ["stream_id", "method", "n_detections", "n_days", "rate"],
        )
        manifest.add_output(rates_path)
        sim_rows = []
        for i, m1 in enumerate(methods):
            for m2 in methods[i + 1 :]:
                logs1 = [
                    per_method_stream.get((m1, s), online.DetectionLog(stream_id=s))
                    for s in sorted(stream_ids)
                ]
                logs2 = [
                    per_method_stream.get((m2, s), online.DetectionLog(stream_id=s))
                    for s in sorted(stream_ids)
                ]
                sim_rows.append(
                    {
                        "method_a": m1, "method_b": m2,
                        "similarity": report.method_similarity(logs1, logs2),
                    }
                )
        sim_path = os.path.join(out, "similarity.csv")
        write_table(sim_rows, sim_path, ["method_a", "method_b", "similarity"])
        manifest.add_output(sim_path)
        wrote_something = True
    if args.spearman:
        manifest.add_input(args.spearman)
        xs, ys = [], []
        import csv as _csv

        with open(args.spearman, newline="") as fh:
            reader = _csv.DictReader(fh)
            if not reader.fieldnames or len(reader.fieldnames) < 2:
                raise DayChangeError(f"{args.spearman}: need two columns")
            cx, cy = reader.fieldnames[:2]
            for row in reader:
                xs.append(float(row[cx]))
                ys.append(float(row[cy]))
        result = report.spearman_bootstrap(
            np.array(xs), np.array(ys), B=args.bootstrap, seed=config["seed"]
        )
        sp_path = os.path.join(out, "spearman.csv")
        write_table(
            [
                {
                    "x": cx, "y": cy, "rho": result.rho,
                    "ci_low": result.ci_low, "ci_high": result.ci_high,
                    "bootstrap_samples": args.bootstrap,
                }
            ],
            sp_path, ["x", "y", "rho", "ci_low", "ci_high", "bootstrap_samples"],
        )
        manifest.add_output(sp_path)
        wrote_something = True
    if not wrote_something:
        raise DayChangeError("report needs --logs and/or --spearman")
    manifest.write(out)
    print(f"report artifacts -> {out}")
    return 0


def _load_day_counts(args, stream_ids) -> dict:
    if args.days_file:
        days = {}
        import csv as _csv

        with open(args.days_file, newline="") as fh:
            for row in _csv.DictReader(fh):
                days[row["stream_id"]] = int(row["n_days"])
        return days
    if args.days:
        return {sid: args.days for sid in stream_ids}
    raise DayChangeError("report --logs needs --days or --days-file")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="daychange",
        description="Online multivariate change point detection for daily "
        "feature streams",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, reps=False):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None,
                       help="worker processes (0 = all cores)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--alpha", type=float, default=None)

    p = sub.add_parser("preprocess", help="ingest, segment, and residualize")
    p.add_argument("--input", required=True)
    p.add_argument("--ridge-lambda", dest="ridge_lambda", type=float)
    p.add_argument("--int-offset", dest="int_offset", type=float)
    p.add_argument("--min-length", dest="min_length", type=int)
    p.add_argument("--max-consecutive-missing", dest="max_consecutive_missing",
                   type=int)
    p.add_argument("--causal", action="store_const", const=True, default=None)
    p.add_argument("--tune-lambda", dest="tune_lambda",
                   help="comma-separated lambda grid to scan")
    common(p)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("detect", help="online detection over residual files")
    p.add_argument("--input", required=True, nargs="+")
    p.add_argument("--method", choices=METHOD_NAMES, default=None)
    p.add_argument("--b", type=int, default=None, help="null replicates")
    p.add_argument("--phi", default=None, help="float or 'auto'")
    p.add_argument("--cache", help="null-distribution cache directory")
    common(p)
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("simulate", help="power tables over a scenario grid")
    p.add_argument("--grid", help="scenario CSV")
    p.add_argument("--preset", choices=["power", "estimators"])
    p.add_argument("--methods", default="vcstar")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--b", type=int, default=None)
    p.add_argument("--effect", type=float, default=None,
                   help="fixed effect size (skips calibration)")
    p.add_argument("--calibration-reps", dest="calibration_reps", type=int,
                   default=None)
    common(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("calibrate", help="effect size for a target power")
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--k-star", dest="k_star", type=int, default=4)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--omega", type=float, default=1.0)
    p.add_argument("--phi", type=float, default=None)
    p.add_argument("--kind", choices=["mean_only", "variance_only", "both"],
                   default="mean_only")
    p.add_argument("--target", type=float, default=0.8)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--b", type=int, default=None)
    common(p)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("select-phi", help="iterative phi selection")
    p.add_argument("--input", required=True, help="pre-change residual CSV")
    p.add_argument("--t", type=int, required=True,
                   help="monitoring length the null should match")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--b", type=int, default=None)
    common(p)
    p.set_defaults(fn=cmd_select_phi)

    p = sub.add_parser("null-dist", help="build and persist a null distribution")
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--phi", type=float, default=1.0)
    p.add_argument("--db", type=int, default=None)
    p.add_argument("--method", choices=METHOD_NAMES, default=None)
    p.add_argument("--b", type=int, default=None)
    common(p)
    p.set_defaults(fn=cmd_null_dist)

    p = sub.add_parser("report", help="rates, similarity, rank correlations")
    p.add_argument("--logs", nargs="*", help="detection log CSVs")
    p.add_argument("--days", type=int, help="monitored days for all streams")
    p.add_argument("--days-file", dest="days_file",
                   help="CSV of stream_id,n_days")
    p.add_argument("--spearman", help="two-column CSV for rank correlation")
    p.add_argument("--bootstrap", type=int, default=1000)
    common(p)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except DayChangeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
