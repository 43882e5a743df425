"""Monte Carlo alignment experiments: run (method x window x seed) cells of
the sliding-window smoother on synthetic or recorded data, score yaw
consistency against the estimator's own 3-sigma bound, and emit tables and
per-run trace files.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import so3
from .data import Dataset, GnssFix, NoiseSpec, TrajectorySpec, convert_kitti_oxts, generate, load_csv
from .dynamics import DEFAULT_GRAVITY, ProcessNoise, propagate_segment
from .parametrizations import Parametrization
from .smoother import (DynamicsSegment, PositionFactor, PriorFactor,
                       SolverConfig, SolverError, Window, covariance_at,
                       marginalize_oldest, solve)
from .tfg import XI_R, TfgElement

ALL_METHODS = ("tfg", "se23", "linear")


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"           # "synthetic" | "csv:<path>" | "kitti:<dir>"
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    methods: tuple = ALL_METHODS
    windows: tuple = (5,)
    runs: int = 50
    seed: int = 0
    yaw_init: str = "uniform"            # "uniform" | "gaussian" | "truth" | "offset"
    yaw_offset_deg: float = 90.0         # used by the "offset" mode
    gravity: np.ndarray = None
    horizon: float = None                # seconds of data to evaluate (None = all)
    workers: int = 1
    keep_going: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)
    # estimator-side noise; zeros in `noise` fall back to nominal values so a
    # noiseless dataset can still be weighted sensibly
    model_noise: ProcessNoise = None
    model_sigma_y: float = None

    def __post_init__(self):
        if self.gravity is None:
            self.gravity = DEFAULT_GRAVITY.copy()
        self.gravity = np.asarray(self.gravity, dtype=float)
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        for wsize in self.windows:
            if wsize < 2:
                raise ValueError("window sizes must be at least 2")
        self.methods = tuple(Parametrization.from_string(m).value for m in self.methods)
        if self.yaw_init not in ("uniform", "gaussian", "truth", "offset"):
            raise ValueError("yaw_init must be uniform, gaussian, truth, or offset")
        if self.model_noise is None:
            self.model_noise = ProcessNoise(
                sigma_a=self.noise.sigma_a or 0.05,
                sigma_w=self.noise.sigma_w or 0.01,
                sigma_ba=self.noise.sigma_ba or 0.002,
                sigma_bw=self.noise.sigma_bw or 3e-5,
            )
        if self.model_sigma_y is None:
            self.model_sigma_y = self.noise.sigma_y or 1.0

    def initial_covariance(self):
        n = self.noise
        return np.diag(np.repeat([n.init_sigma_r**2, n.init_sigma_v**2,
                                  n.init_sigma_p**2, n.init_sigma_ba**2,
                                  n.init_sigma_bw**2], 3))


@dataclass
class RunRecord:
    """Per-epoch evaluation of one Monte Carlo run."""

    method: str
    window_size: int
    seed: int
    label: str
    t: np.ndarray
    yaw_error_deg: np.ndarray
    yaw_bound_deg: np.ndarray
    position_error_m: np.ndarray
    failed: bool = False
    failure: str = ""
    lm_violations: int = 0

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.yaw_error_deg = np.asarray(self.yaw_error_deg, dtype=float)
        self.yaw_bound_deg = np.asarray(self.yaw_bound_deg, dtype=float)
        self.position_error_m = np.asarray(self.position_error_m, dtype=float)
        lengths = {len(self.t), len(self.yaw_error_deg), len(self.yaw_bound_deg),
                   len(self.position_error_m)}
        if len(lengths) != 1:
            raise ValueError("per-epoch arrays must have equal lengths")

    @property
    def consistent(self):
        if self.failed or len(self.t) == 0:
            return False
        return bool(np.all(np.abs(self.yaw_error_deg) <= self.yaw_bound_deg))


def yaw_error_degrees(r_est, r_true):
    """Yaw of the error rotation R_est^T R_true, ZYX convention, degrees."""
    r_err = r_est.T @ r_true
    return math.degrees(math.atan2(r_err[1, 0], r_err[0, 0]))


def _load_source(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset.startswith("csv:"):
        return load_csv(cfg.dataset[4:])
    if cfg.dataset.startswith("kitti:"):
        return convert_kitti_oxts(cfg.dataset[6:])
    if cfg.dataset == "synthetic":
        raise ValueError("synthetic datasets are generated per run, not loaded")
    raise ValueError(f"unknown dataset source {cfg.dataset!r}")


def _run_dataset(cfg: ExperimentConfig, seed, rng, base: Dataset | None):
    """Dataset for one run: synthetic generation with the run's seed, or the
    shared recorded dataset with position fixes synthesized from truth."""
    if cfg.dataset == "synthetic":
        return generate(cfg.trajectory, replace(cfg.noise, seed=seed), cfg.gravity)
    ds = base if base is not None else _load_source(cfg)
    if ds.gnss:
        return ds
    period = 1.0 / cfg.trajectory.gnss_rate
    t_last = ds.truth[-1][0]
    fixes = []
    t = ds.truth[0][0]
    while t <= t_last + 1e-9:
        try:
            p = ds.truth_at(t, tol=period / 2).p
        except KeyError:
            break
        fixes.append(GnssFix(t, p + cfg.noise.sigma_y * rng.standard_normal(3),
                             cfg.noise.sigma_y))
        t += period
    return Dataset(ds.imu, fixes, ds.truth, label=ds.label)


def run_cell(cfg: ExperimentConfig, method, window_size, seed,
             dataset: Dataset | None = None) -> RunRecord:
    """One Monte Carlo run: sample the initial yaw, feed IMU and position
    fixes through the sliding-window smoother, record the yaw error and the
    estimator's 3-sigma yaw bound at every epoch.

    Solver failures yield a record flagged failed (counted inconsistent).
    """
    kind = Parametrization.from_string(method)
    rng = np.random.default_rng([seed, cfg.seed, 0x7F6])
    ds = _run_dataset(cfg, seed, rng, dataset)
    label = ds.label or cfg.dataset

    fixes = ds.gnss
    if cfg.horizon is not None:
        fixes = [f for f in fixes if f.t <= ds.gnss[0].t + cfg.horizon + 1e-9]

    truth0 = ds.truth_at(fixes[0].t)
    true_yaw = so3.euler_zyx(truth0.r)[0]
    if cfg.yaw_init == "truth":
        # exact initialization from the true state, for closed-loop checks
        x0 = truth0.copy()
    else:
        if cfg.yaw_init == "uniform":
            yaw0 = rng.uniform(-math.pi, math.pi)
        elif cfg.yaw_init == "offset":
            yaw0 = true_yaw + math.radians(cfg.yaw_offset_deg)
        else:
            yaw0 = true_yaw + cfg.noise.init_sigma_r * rng.standard_normal()
        x0 = TfgElement(so3.rotz(yaw0), np.zeros(3), truth0.p.copy(),
                        np.zeros(3), np.zeros(3))

    meas_cov = cfg.model_sigma_y**2 * np.eye(3)
    solver_cfg = replace(cfg.solver, window_size=window_size)
    w = Window([fixes[0].t], [x0.copy()],
               PriorFactor(0, x0.copy(), cfg.initial_covariance()),
               [], [PositionFactor(0, fixes[0].y.copy(), meas_cov.copy())],
               gravity=cfg.gravity)

    times, yaw_errs, bounds, pos_errs = [], [], [], []
    violations = 0
    failure = ""
    failed = False
    try:
        for k, fix in enumerate(fixes):
            if k > 0:
                samples = ds.imu_between(fixes[k - 1].t, fix.t)
                seg = DynamicsSegment(samples, fix.t, cfg.model_noise)
                w.times.append(fix.t)
                w.states.append(propagate_segment(w.states[-1], samples, fix.t,
                                                  cfg.gravity))
                w.segments.append(seg)
                w.pos_factors.append(PositionFactor(len(w.states) - 1,
                                                    fix.y.copy(), meas_cov.copy()))
            report = solve(kind, w, solver_cfg)
            violations += report.lm_violations
            if len(w) > window_size:
                marginalize_oldest(kind, w)
            last = len(w) - 1
            truth_k = ds.truth_at(fix.t)
            cov = covariance_at(kind, w, last)
            times.append(fix.t)
            yaw_errs.append(yaw_error_degrees(w.states[last].r, truth_k.r))
            bounds.append(3.0 * math.degrees(math.sqrt(max(cov[XI_R, XI_R][2, 2], 0.0))))
            pos_errs.append(float(np.linalg.norm(w.states[last].p - truth_k.p)))
    except (ValueError, SolverError, np.linalg.LinAlgError) as exc:
        failed = True
        failure = f"{type(exc).__name__}: {exc}"

    return RunRecord(method, window_size, seed, label, times, yaw_errs,
                     bounds, pos_errs, failed=failed, failure=failure,
                     lm_violations=violations)


def consistency_ratio(records) -> float:
    """Fraction of runs whose yaw error stayed inside the 3-sigma bound."""
    records = list(records)
    if not records:
        raise ValueError("consistency_ratio needs at least one record")
    return sum(1 for r in records if r.consistent) / len(records)


def _cell_task(args):
    cfg, method, window, seed = args
    return run_cell(cfg, method, window, seed)


def run_experiment(cfg: ExperimentConfig, progress=None):
    """Run every (method x window x run) cell; returns the list of records.

    Runs are seeded cfg.seed + run index, identical across methods and
    windows so comparisons are paired. Cells are independent; with
    cfg.workers > 1 they execute on a process pool.
    """
    base = None if cfg.dataset == "synthetic" else _load_source(cfg)
    tasks = [(cfg, method, window, cfg.seed + run)
             for method in cfg.methods
             for window in cfg.windows
             for run in range(cfg.runs)]
    records = []
    if cfg.workers > 1 and cfg.dataset == "synthetic":
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for rec in pool.map(_cell_task, tasks, chunksize=4):
                records.append(rec)
                if progress:
                    progress(rec)
    else:
        for cfg_, method, window, seed in tasks:
            rec = run_cell(cfg_, method, window, seed, dataset=base)
            records.append(rec)
            if progress:
                progress(rec)
    return records


def _sanitize(text):
    return "".join(c if c.isalnum() or c in "-_" else "-" for c in text)


def emit_report(records, out_dir):
    """Write the consistency table (Markdown + CSV) and per-run traces.

    Returns the table path. Deterministic: rerunning with the same records
    overwrites the same files with identical content.
    """
    records = list(records)
    if not records:
        raise ValueError("emit_report needs at least one completed cell")
    out = Path(out_dir)
    traces = out / "traces"
    traces.mkdir(parents=True, exist_ok=True)

    methods = sorted({r.method for r in records},
                     key=lambda m: ALL_METHODS.index(m) if m in ALL_METHODS else 99)
    cells = sorted({(r.label, r.window_size) for r in records})
    md = ["| sequence | window | " + " | ".join(methods) + " |",
          "|---" * (2 + len(methods)) + "|"]
    csv_lines = ["sequence,window," + ",".join(methods)]
    for label, window in cells:
        ratios = []
        for m in methods:
            cell = [r for r in records if
                    (r.label, r.window_size, r.method) == (label, window, m)]
            ratios.append(f"{consistency_ratio(cell):.2f}" if cell else "-")
        md.append(f"| {label} | {window} | " + " | ".join(ratios) + " |")
        csv_lines.append(f"{label},{window}," + ",".join(ratios))
    (out / "table.md").write_text("\n".join(md) + "\n")
    (out / "table.csv").write_text("\n".join(csv_lines) + "\n")

    for r in records:
        name = f"{_sanitize(r.label)}_{r.method}_w{r.window_size}_run{r.seed}.csv"
        lines = ["t,yaw_error_deg,yaw_bound_3sigma_deg,position_error_m"]
        for i in range(len(r.t)):
            lines.append(f"{r.t[i]:.6f},{r.yaw_error_deg[i]:.9g},"
                         f"{r.yaw_bound_deg[i]:.9g},{r.position_error_m[i]:.9g}")
        if r.failed:
            lines.append(f"# failed: {r.failure}")
        (traces / name).write_text("\n".join(lines) + "\n")
    return out / "table.md"
