"""BFGS with a backtracking Armijo line search that never leaves a feasible set."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    fun_trace: list = field(default_factory=list)
    grad_norm_trace: list = field(default_factory=list)
    message: str = ""


def relative_grad_norm(g: np.ndarray, x: np.ndarray) -> float:
    return float(np.linalg.norm(g) / max(1.0, np.linalg.norm(x)))


def minimize_bfgs(fun: Callable, x0, feasible: Callable[[np.ndarray], bool],
                  rel_grad_tol: float = 1e-6, max_iters: int = 200,
                  scale: Optional[np.ndarray] = None, max_step_fraction: Optional[np.ndarray] = None,
                  c1: float = 1e-4, max_backtracks: int = 50) -> OptimizeResult:
    """Minimize ``fun`` (returning ``(value, grad)``) from a feasible ``x0``.

    The search runs in coordinates ``x / scale``. Trial points that are
    infeasible, or where ``fun`` raises ``ArithmeticError``/``ValueError``, are
    treated like failed Armijo checks. ``max_step_fraction`` (per coordinate,
    NaN for unconstrained) caps steps towards zero for sign-constrained
    coordinates so a trial never lands on the boundary.
    """
    x = np.asarray(x0, dtype=float).copy()
    if not feasible(x):
        raise ValueError("initial point is infeasible")
    s = np.ones_like(x) if scale is None else np.asarray(scale, dtype=float)
    f, g = fun(x)
    res = OptimizeResult(x, f, g, 0, False, [float(f)], [relative_grad_norm(g, x)])
    n = x.size
    Hinv = np.eye(n)
    first = True
    for it in range(1, max_iters + 1):
        if res.grad_norm_trace[-1] <= rel_grad_tol:
            res.converged = True
            res.message = "relative gradient norm below tolerance"
            break
        gs = g * s
        p = -(Hinv @ gs) * s
        if gs @ (Hinv @ gs) <= 0:
            Hinv = np.eye(n)
            p = -gs * s
        alpha = 1.0
        if first:
            alpha = min(1.0, 0.1 * np.linalg.norm(x / s) / max(np.linalg.norm(p / s), 1e-300)) \
                if np.linalg.norm(x / s) > 0 else 1.0
        if max_step_fraction is not None:
            frac = np.asarray(max_step_fraction)
            mask = ~np.isnan(frac) & (p * x < 0)
            if np.any(mask):
                alpha = min(alpha, float(np.min(frac[mask] * np.abs(x[mask]) / np.abs(p[mask]))))
        slope = g @ p
        accepted = False
        for _ in range(max_backtracks):
            trial = x + alpha * p
            if feasible(trial):
                try:
                    f_new, g_new = fun(trial)
                except (ArithmeticError, ValueError):
                    f_new = np.inf
                if np.isfinite(f_new) and f_new <= f + c1 * alpha * slope:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            if not first and not np.allclose(Hinv, np.eye(n)):
                Hinv = np.eye(n)
                first = True
                continue
            res.message = "line search failed"
            break
        step = (trial - x) / s
        yk = (g_new - g) * s
        sy = step @ yk
        if sy > 1e-12 * np.linalg.norm(step) * np.linalg.norm(yk):
            if first:
                Hinv = np.eye(n) * (sy / (yk @ yk))
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(step, yk)
            Hinv = V @ Hinv @ V.T + rho * np.outer(step, step)
            first = False
        x, f, g = trial, f_new, g_new
        res.x, res.fun, res.grad, res.iterations = x, f, g, it
        res.fun_trace.append(float(f))
        res.grad_norm_trace.append(relative_grad_norm(g, x))
    else:
        res.message = "maximum iterations reached"
    if not res.converged and res.grad_norm_trace[-1] <= rel_grad_tol:
        res.converged = True
    return res
