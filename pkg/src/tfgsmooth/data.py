"""Synthetic trajectory and measurement generation, plus dataset I/O.

Synthetic truth is rolled out through the same discrete model the estimator
uses, so noiseless IMU replayed from the true initial state reproduces the
truth exactly. Planar profiles (yaw-rate programs at constant speed) with
gravity along -z; the accelerometer signal is the exact inverse dynamics of
the velocity row plus bias plus white noise.

Dataset CSV schema (one file, comma separated, '#' comments):
    IMU,t,wx,wy,wz,ax,ay,az
    GNSS,t,px,py,pz,sigma
    TRUTH,t,px,py,pz,qw,qx,qy,qz,vx,vy,vz
Floats carry 17 significant digits. True biases are stored in
'# bias_a x y z' / '# bias_w x y z' comment lines so a save/load round trip
is lossless.

KITTI OXTS input: one whitespace-separated record per frame under
oxts/data/*.txt plus oxts/timestamps.txt. Field indices used (0-based):
lat 0, lon 1, alt 2, roll 3, pitch 4, yaw 5, vn 6, ve 7, vu 10,
ax 11, ay 12, az 13, wx 17, wy 18, wz 19.
"""

from __future__ import annotations

import datetime
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import so3
from .dynamics import DEFAULT_GRAVITY, ImuSample, propagate
from .tfg import TfgElement

EARTH_RADIUS = 6378137.0  # equatorial, meters

PROFILES = ("straight", "circle", "figure-eight", "piecewise-turns")


@dataclass
class TrajectorySpec:
    duration: float = 60.0
    imu_rate: float = 100.0
    gnss_rate: float = 1.0
    profile: str = "figure-eight"
    speed: float = 5.0
    bias_a: np.ndarray = None
    bias_w: np.ndarray = None

    def __post_init__(self):
        self.bias_a = np.zeros(3) if self.bias_a is None else np.asarray(self.bias_a, float)
        self.bias_w = np.zeros(3) if self.bias_w is None else np.asarray(self.bias_w, float)
        if self.imu_rate <= 0 or self.gnss_rate <= 0:
            raise ValueError("rates must be positive")
        ratio = self.imu_rate / self.gnss_rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("imu_rate must be an integer multiple of gnss_rate")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; choose from {PROFILES}")


@dataclass
class NoiseSpec:
    """Measurement and process noise magnitudes plus initial-uncertainty
    sigmas. `init_sigma_r` is in radians."""

    sigma_y: float = 1.0
    sigma_a: float = 0.05
    sigma_w: float = 0.01
    sigma_ba: float = 0.002
    sigma_bw: float = 3e-5
    init_sigma_p: float = 1.0
    init_sigma_v: float = 10.0
    init_sigma_r: float = math.radians(100.0)
    init_sigma_ba: float = 0.06
    init_sigma_bw: float = 0.07
    seed: int = 0

    def __post_init__(self):
        values = [self.sigma_y, self.sigma_a, self.sigma_w, self.sigma_ba,
                  self.sigma_bw, self.init_sigma_p, self.init_sigma_v,
                  self.init_sigma_r, self.init_sigma_ba, self.init_sigma_bw]
        if min(values) < 0:
            raise ValueError("noise sigmas must be nonnegative")


@dataclass
class GnssFix:
    t: float
    y: np.ndarray
    sigma: float


@dataclass
class Dataset:
    imu: list
    gnss: list
    truth: list           # (t, TfgElement) pairs, time sorted
    label: str = ""
    _truth_times: np.ndarray = field(default=None, repr=False)

    def truth_at(self, t, tol=1e-6):
        if self._truth_times is None or len(self._truth_times) != len(self.truth):
            self._truth_times = np.array([entry[0] for entry in self.truth])
        i = int(np.searchsorted(self._truth_times, t))
        for j in (i - 1, i, i + 1):
            if 0 <= j < len(self.truth) and abs(self.truth[j][0] - t) <= tol:
                return self.truth[j][1]
        raise KeyError(f"no truth entry at t={t}")

    def imu_between(self, t0, t1, tol=1e-9):
        """Samples with t0 <= t < t1."""
        return [s for s in self.imu if t0 - tol <= s.t < t1 - tol]


def _yaw_rate_program(profile, speed):
    if profile == "straight":
        return lambda t: 0.0
    if profile == "circle":
        return lambda t: 0.25
    if profile == "figure-eight":
        return lambda t: 0.35 * math.cos(2.0 * math.pi * t / 20.0)
    if profile == "piecewise-turns":
        def rate(t):
            cycle, phase = divmod(t, 12.0)
            if 6.0 <= phase < 9.0:
                return (math.pi / 6.0) * (1.0 if int(cycle) % 2 == 0 else -1.0)
            return 0.0
        return rate
    raise ValueError(f"unknown profile {profile!r}")


def generate(spec: TrajectorySpec, noise: NoiseSpec, gravity=None) -> Dataset:
    """Roll out a synthetic trajectory and its IMU/GNSS measurements.

    All randomness comes from one generator seeded with noise.seed, so equal
    seeds give identical datasets.
    """
    g = DEFAULT_GRAVITY if gravity is None else np.asarray(gravity, dtype=float)
    if abs(g[0]) > 1e-12 or abs(g[1]) > 1e-12:
        raise ValueError("synthetic profiles assume gravity along the z axis")
    rng = np.random.default_rng(noise.seed)
    dt = 1.0 / spec.imu_rate
    n_steps = int(round(spec.duration * spec.imu_rate))
    yaw_rate = _yaw_rate_program(spec.profile, spec.speed)

    gyro_noise = noise.sigma_w * rng.standard_normal((n_steps, 3))
    accel_noise = noise.sigma_a * rng.standard_normal((n_steps, 3))

    x = TfgElement(np.eye(3), np.array([spec.speed, 0.0, 0.0]), np.zeros(3),
                   spec.bias_a.copy(), spec.bias_w.copy())
    truth = [(0.0, x.copy())]
    imu = []
    for k in range(n_steps):
        t = k * dt
        w_true = np.array([0.0, 0.0, yaw_rate(t)])
        a_true = np.array([0.0, spec.speed * yaw_rate(t), -g[2]])
        clean = ImuSample(t, w_true + spec.bias_w, a_true + spec.bias_a)
        imu.append(ImuSample(t, clean.omega + gyro_noise[k],
                             clean.accel + accel_noise[k]))
        x = propagate(x, clean, dt, g)
        truth.append(((k + 1) * dt, x.copy()))

    stride = int(round(spec.imu_rate / spec.gnss_rate))
    gnss = []
    for k in range(0, n_steps + 1, stride):
        p_true = truth[k][1].p
        y = p_true + noise.sigma_y * rng.standard_normal(3)
        gnss.append(GnssFix(truth[k][0], y, noise.sigma_y))

    return Dataset(imu, gnss, truth, label=f"synthetic:{spec.profile}")


def _fmt(x):
    return format(float(x), ".17g")


def save_csv(dataset: Dataset, path):
    """Write a dataset in the documented CSV schema."""
    path = Path(path)
    lines = ["# tfgsmooth dataset",
             "# IMU,t,wx,wy,wz,ax,ay,az",
             "# GNSS,t,px,py,pz,sigma",
             "# TRUTH,t,px,py,pz,qw,qx,qy,qz,vx,vy,vz"]
    if dataset.truth:
        first = dataset.truth[0][1]
        lines.append("# bias_a " + " ".join(_fmt(v) for v in first.b_a))
        lines.append("# bias_w " + " ".join(_fmt(v) for v in first.b_w))
    for s in dataset.imu:
        lines.append(",".join(["IMU", _fmt(s.t)] +
                              [_fmt(v) for v in s.omega] + [_fmt(v) for v in s.accel]))
    for fix in dataset.gnss:
        lines.append(",".join(["GNSS", _fmt(fix.t)] +
                              [_fmt(v) for v in fix.y] + [_fmt(fix.sigma)]))
    for t, x in dataset.truth:
        q = so3.quat_from_rotation(x.r)
        lines.append(",".join(["TRUTH", _fmt(t)] + [_fmt(v) for v in x.p] +
                              [_fmt(v) for v in q] + [_fmt(v) for v in x.v]))
    path.write_text("\n".join(lines) + "\n")


def load_csv(path) -> Dataset:
    """Read the documented CSV schema; raises ValueError naming the line on
    malformed rows or nonmonotonic timestamps."""
    path = Path(path)
    imu, gnss, truth = [], [], []
    bias_a = np.zeros(3)
    bias_w = np.zeros(3)
    last_t = {"IMU": -np.inf, "GNSS": -np.inf, "TRUTH": -np.inf}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].split()
            if len(body) == 4 and body[0] in ("bias_a", "bias_w"):
                vec = np.array([float(v) for v in body[1:]])
                if body[0] == "bias_a":
                    bias_a = vec
                else:
                    bias_w = vec
            continue
        fields = line.split(",")
        kind = fields[0]
        try:
            values = [float(v) for v in fields[1:]]
        except ValueError:
            raise ValueError(f"{path.name}:{lineno}: unparseable number in row")
        expected = {"IMU": 7, "GNSS": 5, "TRUTH": 11}.get(kind)
        if expected is None:
            raise ValueError(f"{path.name}:{lineno}: unknown row type {kind!r}")
        if len(values) != expected:
            raise ValueError(
                f"{path.name}:{lineno}: {kind} row needs {expected} numbers, got {len(values)}")
        t = values[0]
        if t <= last_t[kind]:
            raise ValueError(f"{path.name}:{lineno}: nonmonotonic {kind} timestamp")
        last_t[kind] = t
        if kind == "IMU":
            imu.append(ImuSample(t, np.array(values[1:4]), np.array(values[4:7])))
        elif kind == "GNSS":
            gnss.append(GnssFix(t, np.array(values[1:4]), values[4]))
        else:
            r = so3.rotation_from_quat(np.array(values[4:8]))
            truth.append((t, TfgElement(r, np.array(values[8:11]),
                                        np.array(values[1:4]), bias_a.copy(),
                                        bias_w.copy())))
    return Dataset(imu, gnss, truth, label=path.stem)


def _parse_oxts_timestamp(line):
    """Whole-second datetime plus fractional seconds, kept separate so that
    relative times retain nanosecond resolution."""
    date_part, time_part = line.strip().split(" ")
    if "." in time_part:
        hms, frac = time_part.split(".")
    else:
        hms, frac = time_part, "0"
    return datetime.datetime.fromisoformat(f"{date_part}T{hms}"), float("0." + frac)


def convert_kitti_oxts(directory) -> Dataset:
    """Convert a KITTI raw-drive OXTS directory to a Dataset.

    Accepts either the drive directory (containing oxts/) or the oxts
    directory itself. Positions are mapped to a flat east-north-up tangent
    plane anchored at the first fix; no GNSS rows are produced (position
    measurements are synthesized downstream by noising the ground truth).
    """
    directory = Path(directory)
    oxts = directory / "oxts" if (directory / "oxts").is_dir() else directory
    data_dir = oxts / "data"
    stamp_file = oxts / "timestamps.txt"
    if not data_dir.is_dir():
        raise ValueError(f"no OXTS data directory under {directory}")
    if not stamp_file.is_file():
        raise ValueError(f"missing timestamps file {stamp_file}")
    frames = sorted(data_dir.glob("*.txt"))
    if not frames:
        raise ValueError(f"no OXTS records in {data_dir}")
    stamps = [_parse_oxts_timestamp(line)
              for line in stamp_file.read_text().splitlines() if line.strip()]
    if len(stamps) != len(frames):
        raise ValueError(
            f"timestamp count {len(stamps)} does not match record count {len(frames)}")

    base, base_frac = stamps[0]
    lat0 = lon0 = alt0 = None
    imu, truth = [], []
    for (whole, frac), frame in zip(stamps, frames):
        t = (whole - base).total_seconds() + (frac - base_frac)
        values = frame.read_text().split()
        if len(values) < 20:
            raise ValueError(f"short OXTS record {frame.name}: {len(values)} fields")
        v = [float(x) for x in values[:20]]
        lat, lon, alt = v[0], v[1], v[2]
        roll, pitch, yaw = v[3], v[4], v[5]
        vel_enu = np.array([v[7], v[6], v[10]])
        accel = np.array(v[11:14])
        omega = np.array(v[17:20])
        if lat0 is None:
            lat0, lon0, alt0 = lat, lon, alt
        p = np.array([
            EARTH_RADIUS * math.cos(math.radians(lat0)) * math.radians(lon - lon0),
            EARTH_RADIUS * math.radians(lat - lat0),
            alt - alt0,
        ])
        r = so3.rotation_from_euler_zyx(yaw, pitch, roll)
        imu.append(ImuSample(t, omega, accel))
        truth.append((t, TfgElement(r, vel_enu, p, np.zeros(3), np.zeros(3))))
    return Dataset(imu, [], truth, label=f"kitti:{directory.name}")
