"""Inverse optimal control of attention switching between a continuous and a discrete task."""
from .belief import CovarianceSchedule, HybridState, filter_step, tabulate_covariances
from .estimators import EstimationOptions, EstimationResult, estimate_reward
from .model import (
    DRIVER_THETA,
    AttentionProblem,
    DriverConfig,
    InitialState,
    ProblemError,
    RewardParams,
    SecondaryMdp,
    build_driver_problem,
    validate_problem,
)
from .simulator import Dataset, simulate_batch, simulate_trajectory
from .soft_solver import InfeasibleParameterError, SoftPolicy, solve_soft_policy

__version__ = "0.1.0"
