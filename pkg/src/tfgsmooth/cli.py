"""Command-line driver for the Monte Carlo alignment experiments.

Usage:
    tfgsmooth run --config experiment.cfg --out results/ [overrides]

The config file is plain text, one `key = value` per line, '#' comments.
Every flag overrides its config entry. See README for the key reference.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .data import NoiseSpec, TrajectorySpec
from .dynamics import ProcessNoise
from .experiments import (ALL_METHODS, ExperimentConfig, consistency_ratio,
                          emit_report, run_experiment)


def parse_config_file(path):
    """Plain-text key = value pairs; '#' starts a comment."""
    entries = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _bool(text):
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def build_config(entries) -> ExperimentConfig:
    """ExperimentConfig from a flat key/value mapping (config file merged
    with CLI overrides)."""
    get = entries.get
    trajectory = TrajectorySpec(
        duration=float(get("duration", 60.0)),
        imu_rate=float(get("imu_rate", 100.0)),
        gnss_rate=float(get("gnss_rate", 1.0)),
        profile=get("profile", "figure-eight"),
        speed=float(get("speed", 5.0)),
        bias_a=_floats(get("true_ba", "0 0 0")),
        bias_w=_floats(get("true_bw", "0 0 0")),
    )
    noise = NoiseSpec(
        sigma_y=float(get("sigma_y", 1.0)),
        sigma_a=float(get("sigma_a", 0.05)),
        sigma_w=float(get("sigma_w", 0.01)),
        sigma_ba=float(get("sigma_ba", 0.002)),
        sigma_bw=float(get("sigma_bw", 3e-5)),
        init_sigma_p=float(get("init_sigma_p", 1.0)),
        init_sigma_v=float(get("init_sigma_v", 10.0)),
        init_sigma_r=np.radians(float(get("init_sigma_R_deg", 100.0))),
        init_sigma_ba=float(get("init_sigma_ba", 0.06)),
        init_sigma_bw=float(get("init_sigma_bw", 0.07)),
        seed=int(get("seed", 0)),
    )
    model_noise = None
    if any(k in entries for k in ("model_sigma_a", "model_sigma_w",
                                  "model_sigma_ba", "model_sigma_bw")):
        model_noise = ProcessNoise(
            sigma_a=float(get("model_sigma_a", noise.sigma_a or 0.05)),
            sigma_w=float(get("model_sigma_w", noise.sigma_w or 0.01)),
            sigma_ba=float(get("model_sigma_ba", noise.sigma_ba or 0.002)),
            sigma_bw=float(get("model_sigma_bw", noise.sigma_bw or 3e-5)),
        )
    horizon = get("horizon")
    return ExperimentConfig(
        dataset=get("dataset", "synthetic"),
        trajectory=trajectory,
        noise=noise,
        methods=tuple(get("methods", ",".join(ALL_METHODS)).replace(",", " ").split()),
        windows=tuple(int(v) for v in get("windows", "5").replace(",", " ").split()),
        runs=int(get("runs", 50)),
        seed=int(get("seed", 0)),
        yaw_init=get("yaw_init", "uniform"),
        gravity=np.array(_floats(get("gravity", "0 0 -9.81"))),
        horizon=float(horizon) if horizon is not None else None,
        workers=int(get("workers", 1)),
        keep_going=_bool(get("keep_going", "false")),
        model_noise=model_noise,
        model_sigma_y=float(get("model_sigma_y")) if "model_sigma_y" in entries else None,
    )


def make_parser():
    parser = argparse.ArgumentParser(prog="tfgsmooth",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a Monte Carlo consistency experiment")
    run.add_argument("--config", help="plain-text key=value experiment config")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--methods", help="comma list from tfg,se23,linear")
    run.add_argument("--windows", help="comma list of window sizes")
    run.add_argument("--runs", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--gravity", help="gx,gy,gz")
    run.add_argument("--workers", type=int)
    run.add_argument("--horizon", type=float)
    run.add_argument("--keep-going", action="store_true", default=None)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    entries = parse_config_file(args.config) if args.config else {}
    for key in ("methods", "windows", "runs", "seed", "gravity", "workers",
                "horizon"):
        value = getattr(args, key)
        if value is not None:
            entries[key] = str(value)
    if args.keep_going:
        entries["keep_going"] = "true"

    try:
        cfg = build_config(entries)
    except (ValueError, KeyError) as exc:
        print(f"error: bad configuration: {exc}", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    errors = 0

    def progress(rec):
        nonlocal errors
        if rec.failed:
            errors += 1
            print(f"  run failed: {rec.method} w{rec.window_size} "
                  f"seed {rec.seed}: {rec.failure}", file=sys.stderr)

    try:
        records = run_experiment(cfg, progress=progress)
    except Exception as exc:  # cell error: abort unless told to keep going
        print(f"error: {exc}", file=sys.stderr)
        return 1
    table = emit_report(records, out)
    print(table.read_text())
    for window in cfg.windows:
        for method in cfg.methods:
            cell = [r for r in records
                    if r.method == method and r.window_size == window]
            print(f"{method:>7s} w{window}: consistency "
                  f"{consistency_ratio(cell):.2f} over {len(cell)} runs")
    if errors and not cfg.keep_going:
        print(f"{errors} runs raised errors", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
