"""Reward gradients of the soft Q-function.

The gradient of ``Q_t`` with respect to ``vec(blk(Theta1, Theta2))`` is the
expected cumulative (belief) feature outer product, which stays of the form

    M1[t] vec(z z') + M2[t] z + m3[t, d, x_s, u_o, u_s]

so it can be carried backwards in closed form. The discrete parameters only
see the autonomous chain over ``(d, x_s)`` and are tabulated by enumeration.
vec is column-major; all matrices it is applied to are symmetric.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .belief import CovarianceSchedule, HybridState
from .model import AttentionProblem
from .soft_solver import SoftPolicy, _stack_z, expected_next


@dataclass(frozen=True)
class GradientTables:
    M1: np.ndarray  # (T+1, N^2, N^2)
    M2: np.ndarray  # (T+1, N^2, N)
    m3: np.ndarray  # (T+1, D, S, 2, U, N^2)
    disc_grad: np.ndarray  # (T+1, D, S, 2, U, k_s + 1)
    selector: np.ndarray  # (N^2, k_p)

    @property
    def horizon(self) -> int:
        return self.M1.shape[0] - 1


def _vec(X: np.ndarray) -> np.ndarray:
    return np.swapaxes(X, -1, -2).reshape(X.shape[:-2] + (-1,))


def discrete_features(problem: AttentionProblem) -> np.ndarray:
    """``[phi_s(x_s, u_s); u_o]`` laid out as ``(S, 2, U, k_s + 1)``."""
    mdp = problem.sub_mdp
    S, U, k_s = mdp.n_states, mdp.n_controls, mdp.k_s
    out = np.zeros((S, 2, U, k_s + 1))
    out[..., :k_s] = mdp.features[:, None, :, :]
    out[:, 1, :, k_s] = 1.0
    return out


def solve_gradients(problem: AttentionProblem, schedule: CovarianceSchedule,
                    policy: SoftPolicy) -> GradientTables:
    T, n_x, N = problem.horizon, problem.n_x, problem.n_z
    if policy.horizon != T or policy.F.shape[1:] != (problem.n_u, n_x):
        raise ValueError("policy does not belong to this problem")
    D, S, U = problem.n_d, problem.sub_mdp.n_states, problem.sub_mdp.n_controls
    N2 = N * N

    post_blk = np.zeros((T + 1, D, N, N))
    post_blk[:, :, :n_x, :n_x] = schedule.post_cov
    post_vec = _vec(post_blk)

    M1 = np.zeros((T + 1, N2, N2))
    M2 = np.zeros((T + 1, N2, N))
    m3 = np.zeros((T + 1, D, S, 2, U, N2))
    disc = np.zeros((T + 1, D, S, 2, U, problem.k_s + 1))
    inst = discrete_features(problem)

    M1[T] = np.eye(N2)
    m3[T] = post_vec[T][:, None, None, None, :]
    disc[T] = inst[None]
    eye = np.eye(N2)
    for t in range(T - 1, -1, -1):
        A, B, a = problem.dyn_A[t], problem.dyn_B[t], problem.dyn_a[t]
        Fn, fn = policy.F[t + 1], policy.f[t + 1]
        AB = np.hstack([A, B])
        Tm = np.vstack([AB, Fn @ AB])
        tv = np.concatenate([a, Fn @ a + fn])
        Fm = np.vstack([np.eye(n_x), Fn])
        tcol = tv[:, None]

        M1[t] = eye + M1[t + 1] @ np.kron(Tm, Tm)
        M2[t] = M2[t + 1] @ Tm + M1[t + 1] @ (np.kron(Tm, tcol) + np.kron(tcol, Tm))

        pol_cov = np.zeros((N, N))
        pol_cov[n_x:, n_x:] = policy.SigmaF[t + 1]
        base = np.outer(tv, tv) + pol_cov
        spread = Fm @ schedule.mean_update_cov[t] @ Fm.T  # (D, 2, N, N)
        carried = _vec(base + spread) @ M1[t + 1].T + M2[t + 1] @ tv  # (D, 2, N2)

        probs = policy.discrete_probs(t + 1)  # (D, S, 2, U)
        m3_next = np.einsum("dsou,dsouk->dsk", probs, m3[t + 1])
        disc_next = np.einsum("dsou,dsouk->dsk", probs, disc[t + 1])
        m3[t] = (post_vec[t][:, None, None, None, :] + carried[:, None, :, None, :]
                 + expected_next(problem, schedule, m3_next))
        disc[t] = inst[None] + expected_next(problem, schedule, disc_next)

    return GradientTables(M1, M2, m3, disc, problem.feature_spec.selector)


def _continuous_part(tables: GradientTables, t: int, zz_vec, z, m3) -> np.ndarray:
    full = zz_vec @ tables.M1[t].T + z @ tables.M2[t].T + m3
    return full @ tables.selector


def grad_q(tables: GradientTables, policy: SoftPolicy, t: int, state: HybridState,
           u_p, u_o, u_s=0) -> np.ndarray:
    """Gradient of ``Q_t`` with respect to the full parameter vector."""
    z = _stack_z(state.mu, u_p)
    zz = _vec(z[..., :, None] * z[..., None, :])
    m3 = tables.m3[t][state.d, state.x_s, u_o, u_s]
    cont = _continuous_part(tables, t, zz, z, m3)
    disc = tables.disc_grad[t][state.d, state.x_s, u_o, u_s]
    return np.concatenate([cont, disc], axis=-1)


def expected_grad_q(tables: GradientTables, policy: SoftPolicy, t: int,
                    state: HybridState) -> np.ndarray:
    """Expectation of :func:`grad_q` over the policy's controls at ``state``."""
    mu = np.asarray(state.mu, dtype=float)
    n_x = mu.shape[-1]
    mean = mu @ policy.F[t].T + policy.f[t]
    z = np.concatenate([mu, mean], axis=-1)
    second = z[..., :, None] * z[..., None, :]
    second[..., n_x:, n_x:] += policy.SigmaF[t]
    probs = policy.discrete_probs(t)[state.d, state.x_s]  # (..., 2, U)
    m3 = np.einsum("...ou,...ouk->...k", probs, tables.m3[t][state.d, state.x_s])
    cont = _continuous_part(tables, t, _vec(second), z, m3)
    disc = np.einsum("...ou,...ouk->...k", probs, tables.disc_grad[t][state.d, state.x_s])
    return np.concatenate([cont, disc], axis=-1)
