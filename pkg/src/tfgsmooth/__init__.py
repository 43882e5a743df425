"""Sliding-window smoothing for biased-IMU localization, with the
two-frames-group state parametrization alongside SE2(3) and linear
baselines, plus the Monte Carlo consistency harness."""

from . import so3, tfg
from .data import Dataset, GnssFix, NoiseSpec, TrajectorySpec, convert_kitti_oxts, generate, load_csv, save_csv
from .dynamics import (DEFAULT_GRAVITY, ImuSample, ProcessNoise,
                       StepTransition, compound, propagate, propagate_segment,
                       step_jacobian, step_noise)
from .experiments import (ExperimentConfig, RunRecord, consistency_ratio,
                          emit_report, run_cell, run_experiment)
from .parametrizations import (Parametrization, local_coordinates,
                               prior_weight, retract)
from .smoother import (DynamicsSegment, PositionFactor, PriorFactor,
                       SolverConfig, SolverError, Window, covariance_at,
                       linearize, marginalize_oldest, solve)
from .tfg import TfgElement

__all__ = [
    "so3", "tfg", "TfgElement", "Parametrization", "retract",
    "local_coordinates", "prior_weight", "ImuSample", "ProcessNoise",
    "StepTransition", "DEFAULT_GRAVITY", "propagate", "propagate_segment",
    "step_jacobian", "step_noise", "compound", "Window", "PriorFactor",
    "PositionFactor", "DynamicsSegment", "SolverConfig", "SolverError",
    "linearize", "solve", "marginalize_oldest", "covariance_at",
    "TrajectorySpec", "NoiseSpec", "Dataset", "GnssFix", "generate",
    "save_csv", "load_csv", "convert_kitti_oxts", "ExperimentConfig",
    "RunRecord", "run_cell", "run_experiment", "consistency_ratio",
    "emit_report",
]
