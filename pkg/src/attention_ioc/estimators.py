"""Reward estimation: maximum causal entropy (MCE) and likelihood (MCL).

Both objectives carry a log-barrier on the primary parameters, which must
stay negative for the soft policy to exist.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .belief import CovarianceSchedule, HybridState, tabulate_covariances
from .gradients import expected_grad_q, grad_q, solve_gradients
from .model import AttentionProblem, RewardParams
from .optim import minimize_bfgs
from .simulator import Dataset, empirical_feature_expectation
from .soft_solver import InfeasibleParameterError, policy_log_prob, solve_soft_policy

log = logging.getLogger(__name__)

METHODS = ("MCE", "MCL", "DPE")


@dataclass(frozen=True)
class EstimationOptions:
    method: str = "MCE"
    barrier_weight: float = 1e-4
    rel_grad_tol: float = 1e-6
    max_iters: int = 200
    theta_init: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.rel_grad_tol <= 0 or self.barrier_weight < 0:
            raise ValueError("tolerances must be positive")


@dataclass
class EstimationResult:
    theta_star: RewardParams
    objective_trace: list = field(default_factory=list)
    grad_norm_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    message: str = ""


def _check_feasible(problem: AttentionProblem, theta: np.ndarray) -> None:
    if np.any(theta[: problem.k_p] >= 0):
        raise InfeasibleParameterError(f"primary parameters must be negative, got {theta[: problem.k_p]}")


def barrier(problem: AttentionProblem, theta: np.ndarray, weight: float):
    """``-weight * sum(log(-theta_p))`` and its gradient."""
    tp = theta[: problem.k_p]
    grad = np.zeros_like(theta)
    grad[: problem.k_p] = -weight / tp
    return float(-weight * np.sum(np.log(-tp))), grad


def mce_objective_grad(problem: AttentionProblem, schedule: CovarianceSchedule,
                       empirical_features, theta, barrier_weight: float = 1e-4, init_state=None):
    """Lagrangian dual ``V_0(x_0) - theta . E`` plus barrier, and its gradient."""
    theta = problem.theta_vector(theta)
    _check_feasible(problem, theta)
    E = np.asarray(empirical_features, dtype=float)
    init = problem.init_state if init_state is None else init_state
    state = HybridState(np.asarray(init.x_p, dtype=float), init.d, init.x_s)
    policy = solve_soft_policy(problem, schedule, theta)
    tables = solve_gradients(problem, schedule, policy)
    value = float(policy.value(0, state.mu, state.d, state.x_s)) - theta @ E
    grad = expected_grad_q(tables, policy, 0, state) - E
    b, bg = barrier(problem, theta, barrier_weight)
    return value + b, grad + bg


def mcl_objective_grad(problem: AttentionProblem, schedule: CovarianceSchedule, data: Dataset,
                       theta, barrier_weight: float = 1e-4):
    """Mean (over trajectories) negative log-likelihood plus barrier, and gradient."""
    theta = problem.theta_vector(theta)
    _check_feasible(problem, theta)
    if data.mu is None or not np.all(np.isfinite(data.mu)):
        raise ValueError("dataset lacks logged belief means")
    policy = solve_soft_policy(problem, schedule, theta)
    tables = solve_gradients(problem, schedule, policy)
    n = len(data)
    nll = 0.0
    grad = np.zeros(problem.n_theta)
    for k in range(data.steps):
        t = data.t0 + k
        state = HybridState(data.mu[:, k], data.d[:, k], data.x_s[:, k])
        u_p, u_o, u_s = data.u_p[:, k], data.u_o[:, k], data.u_s[:, k]
        nll -= float(np.sum(policy_log_prob(policy, t, state, u_p, u_o, u_s)))
        g = expected_grad_q(tables, policy, t, state) - grad_q(tables, policy, t, state, u_p, u_o, u_s)
        grad += g.sum(axis=0)
    b, bg = barrier(problem, theta, barrier_weight)
    return nll / n + b, grad / n + bg


def estimate_reward(problem: AttentionProblem, data: Dataset, opts: EstimationOptions,
                    schedule: Optional[CovarianceSchedule] = None) -> EstimationResult:
    if opts.method not in ("MCE", "MCL"):
        raise ValueError("estimate_reward handles MCE and MCL; use fit_dpe for DPE")
    if opts.theta_init is None:
        raise ValueError("theta_init is required")
    schedule = tabulate_covariances(problem) if schedule is None else schedule
    x0 = problem.theta_vector(opts.theta_init).copy()
    k_p = problem.k_p

    if opts.method == "MCE":
        E = empirical_feature_expectation(data)

        def fun(th):
            return mce_objective_grad(problem, schedule, E, th, opts.barrier_weight)
    else:
        def fun(th):
            return mcl_objective_grad(problem, schedule, data, th, opts.barrier_weight)

    def feasible(th):
        return bool(np.all(th[:k_p] < 0))

    frac = np.full(x0.size, np.nan)
    frac[:k_p] = 0.9
    scale = np.maximum(np.abs(x0), 1e-2)
    res = minimize_bfgs(fun, x0, feasible, opts.rel_grad_tol, opts.max_iters,
                        scale=scale, max_step_fraction=frac)
    log.info("%s estimate after %d iterations (%s): %s", opts.method, res.iterations,
             res.message, res.x)
    return EstimationResult(problem.split_theta(res.x), res.fun_trace, res.grad_norm_trace,
                            res.iterations, res.converged, res.message)
