"""Trajectory-based MM-SQC dynamics of site-exciton models plus an LSTM surrogate
that replays full trajectories from initial conditions.

Units: energies in eV, time in fs, hbar = 0.6582119569 eV fs. Electronic mapping
variables and nuclear oscillator coordinates are dimensionless.
"""

from mmsqc.models import (
    Mode,
    SiteExcitonModel,
    DebyeBathSpec,
    build_model,
    discretize_debye,
)
from mmsqc.sqc import (
    WindowConfig,
    IntegratorConfig,
    PhaseSpaceState,
    Trajectory,
    TrajectoryEnsemble,
    PopulationSeries,
    mm_energy,
    eom,
    action,
    window_assign,
    sample_initial,
    propagate,
    run_ensemble,
    populations,
)
from mmsqc.dataset import SequenceDataset, vectorize, split_sequences, build_dataset
from mmsqc.surrogate import LstmParams, TrainConfig, TrainReport, train
from mmsqc.analysis import RolloutConfig, rollout_trajectory, rollout_ensemble

__all__ = [
    "Mode",
    "SiteExcitonModel",
    "DebyeBathSpec",
    "build_model",
    "discretize_debye",
    "WindowConfig",
    "IntegratorConfig",
    "PhaseSpaceState",
    "Trajectory",
    "TrajectoryEnsemble",
    "PopulationSeries",
    "mm_energy",
    "eom",
    "action",
    "window_assign",
    "sample_initial",
    "propagate",
    "run_ensemble",
    "populations",
    "SequenceDataset",
    "vectorize",
    "split_sequences",
    "build_dataset",
    "LstmParams",
    "TrainConfig",
    "TrainReport",
    "train",
    "RolloutConfig",
    "rollout_trajectory",
    "rollout_ensemble",
]
