"""Exact soft (maximum causal entropy) policy for attention-switching problems.

The soft Q-function splits into a quadratic form in ``z = [mu; u_p]`` that does
not depend on the discrete variables, plus a scalar table ``tau`` over
``(d, x_s, u_o, u_s)``. The continuous policy is Gaussian and the discrete
policy is a softmax over ``tau`` that does not depend on the belief mean.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .belief import CovarianceSchedule, HybridState, attention_bit
from .model import AttentionProblem


class InfeasibleParameterError(ValueError):
    """The control block of the soft Q-function is not negative definite."""

    def __init__(self, message: str, t: Optional[int] = None):
        super().__init__(message if t is None else f"{message} (t={t})")
        self.t = t


@dataclass(frozen=True)
class ControlMarginal:
    F: np.ndarray
    f: np.ndarray
    SigmaF: np.ndarray
    Psi: np.ndarray
    psi: np.ndarray
    c: float


def marginalize_control(Omega1, omega2, n_x: int, n_u: int) -> ControlMarginal:
    """Integrate ``exp(z' Omega1 z + z' omega2)`` over the control part of ``z``.

    Returns the Gaussian control law ``N(F mu + f, SigmaF)`` together with the
    log-integral as a quadratic ``mu' Psi mu + mu' psi + c``.
    """
    Omega1 = np.asarray(Omega1, dtype=float)
    omega2 = np.asarray(omega2, dtype=float)
    O_mm = Omega1[:n_x, :n_x]
    O_mu = Omega1[:n_x, n_x:]
    O_um = Omega1[n_x:, :n_x]
    O_uu = Omega1[n_x:, n_x:]
    w_m, w_u = omega2[:n_x], omega2[n_x:]
    P = -0.5 * (O_uu + O_uu.T)
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise InfeasibleParameterError("control block of the soft Q-function is not negative definite")
    P_inv = np.linalg.inv(P)
    P_inv = 0.5 * (P_inv + P_inv.T)
    F = P_inv @ O_um
    f = 0.5 * P_inv @ w_u
    SigmaF = 0.5 * P_inv
    Psi = O_mm + O_mu @ P_inv @ O_um
    Psi = 0.5 * (Psi + Psi.T)
    psi = w_m + O_mu @ P_inv @ w_u
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    c = 0.5 * n_u * np.log(np.pi) - 0.5 * logdet + 0.25 * w_u @ P_inv @ w_u
    return ControlMarginal(F, f, SigmaF, Psi, psi, float(c))


@dataclass(frozen=True)
class SoftPolicy:
    """Time-indexed soft policy and value tables for t = 0..T.

    ``tau[t, d, x_s, u_o, u_s]`` and ``nu[t, d, x_s]`` hold the discrete parts;
    the continuous value is ``mu' Psi[t] mu + mu' psi[t] + c[t]``.
    """

    theta: np.ndarray
    Omega: np.ndarray
    omega: np.ndarray
    F: np.ndarray
    f: np.ndarray
    SigmaF: np.ndarray
    Psi: np.ndarray
    psi: np.ndarray
    c: np.ndarray
    tau: np.ndarray
    nu: np.ndarray

    @property
    def horizon(self) -> int:
        return self.tau.shape[0] - 1

    def discrete_log_probs(self, t: int) -> np.ndarray:
        """``log pi(u_o, u_s | d, x_s)`` with shape ``(D, S, 2, U)``."""
        return self.tau[t] - self.nu[t][..., None, None]

    def discrete_probs(self, t: int) -> np.ndarray:
        return np.exp(self.discrete_log_probs(t))

    def value(self, t: int, mu, d, x_s):
        mu = np.asarray(mu, dtype=float)
        quad = np.einsum("...i,ij,...j->...", mu, self.Psi[t], mu) + mu @ self.psi[t]
        return quad + self.c[t] + self.nu[t][d, x_s]

    def q_value(self, t: int, mu, u_p, d, x_s, u_o, u_s):
        z = _stack_z(mu, u_p)
        quad = np.einsum("...i,ij,...j->...", z, self.Omega[t], z) + z @ self.omega[t]
        return quad + self.tau[t][d, x_s, u_o, u_s]

    def control_distribution(self, t: int, mu, d, x_s):
        """Batched action distribution used by the simulator.

        Returns ``(mean, cov, probs)`` with ``probs`` of shape ``(..., 2, U)``.
        """
        mu = np.asarray(mu, dtype=float)
        mean = mu @ self.F[t].T + self.f[t]
        return mean, self.SigmaF[t], self.discrete_probs(t)[d, x_s]

    def to_json(self) -> str:
        """Debug dump of the per-step policy (not a stable format)."""
        steps = []
        for t in range(self.horizon + 1):
            steps.append({
                "t": t,
                "F": self.F[t].tolist(),
                "f": self.f[t].tolist(),
                "SigmaF": self.SigmaF[t].tolist(),
                "tau": self.tau[t].tolist(),
            })
        return json.dumps({"theta": self.theta.tolist(), "steps": steps})


def _stack_z(mu, u_p) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    u_p = np.asarray(u_p, dtype=float)
    if u_p.ndim == 0:
        u_p = u_p[None]
    lead = np.broadcast_shapes(mu.shape[:-1], u_p.shape[:-1])
    return np.concatenate([np.broadcast_to(mu, lead + mu.shape[-1:]),
                           np.broadcast_to(u_p, lead + u_p.shape[-1:])], axis=-1)


def discrete_reward(problem: AttentionProblem, theta) -> np.ndarray:
    """``theta_s . phi_s(x_s, u_s) + theta_o u_o`` laid out as ``(S, 2, U)``."""
    params = problem.split_theta(theta)
    r_s = problem.sub_mdp.features @ params.theta_s  # (S, U)
    return r_s[:, None, :] + params.theta_o * np.array([0.0, 1.0])[None, :, None]


def expected_next(problem: AttentionProblem, schedule: CovarianceSchedule,
                  table: np.ndarray) -> np.ndarray:
    """Expectation of a table over ``(d', x_s')`` given ``(d, x_s, u_o, u_s)``.

    ``table`` has shape ``(D, S, ...)``; the result ``(D, S, 2, U, ...)``.
    """
    nd = schedule.next_d  # (D, 2)
    P = problem.sub_mdp.transition[attention_bit(nd)]  # (D, 2, S, U, S')
    nxt = table[nd]  # (D, 2, S', ...)
    return np.einsum("dosuy,doy...->dsou...", P, nxt)


def solve_soft_policy(problem: AttentionProblem, schedule: CovarianceSchedule, theta) -> SoftPolicy:
    theta_vec = problem.theta_vector(theta)
    params = problem.split_theta(theta_vec)
    T, n_x, n_u, N = problem.horizon, problem.n_x, problem.n_u, problem.n_z
    D, S, U = problem.n_d, problem.sub_mdp.n_states, problem.sub_mdp.n_controls
    W = problem.feature_spec.reward_matrix(params.theta_p)
    Theta1 = W[:n_x, :n_x]
    r_disc = discrete_reward(problem, params)
    trace_post = np.einsum("ij,tdji->td", Theta1, schedule.post_cov)

    Omega = np.zeros((T + 1, N, N))
    omega = np.zeros((T + 1, N))
    F = np.zeros((T + 1, n_u, n_x))
    f = np.zeros((T + 1, n_u))
    SigmaF = np.zeros((T + 1, n_u, n_u))
    Psi = np.zeros((T + 1, n_x, n_x))
    psi = np.zeros((T + 1, n_x))
    c = np.zeros(T + 1)
    tau = np.zeros((T + 1, D, S, 2, U))
    nu = np.zeros((T + 1, D, S))

    for t in range(T, -1, -1):
        if t == T:
            Omega[t] = W
            tau[t] = r_disc[None] + trace_post[t][:, None, None, None]
        else:
            AB = np.hstack([problem.dyn_A[t], problem.dyn_B[t]])
            a = problem.dyn_a[t]
            Om = W + AB.T @ Psi[t + 1] @ AB
            Omega[t] = 0.5 * (Om + Om.T)
            omega[t] = AB.T @ (2.0 * Psi[t + 1] @ a + psi[t + 1])
            const = a @ Psi[t + 1] @ a + a @ psi[t + 1] + c[t + 1]
            trace_mu = np.einsum("ij,doji->do", Psi[t + 1], schedule.mean_update_cov[t])
            ev = expected_next(problem, schedule, nu[t + 1])  # (D, S, 2, U)
            tau[t] = (r_disc[None] + trace_post[t][:, None, None, None]
                      + trace_mu[:, None, :, None] + const + ev)
        try:
            marg = marginalize_control(Omega[t], omega[t], n_x, n_u)
        except InfeasibleParameterError as exc:
            raise InfeasibleParameterError(str(exc), t) from None
        F[t], f[t], SigmaF[t] = marg.F, marg.f, marg.SigmaF
        Psi[t], psi[t], c[t] = marg.Psi, marg.psi, marg.c
        nu[t] = logsumexp(tau[t], axis=(-2, -1))

    return SoftPolicy(theta_vec, Omega, omega, F, f, SigmaF, Psi, psi, c, tau, nu)


def _gauss_logpdf(u, mean, cov) -> np.ndarray:
    L = np.linalg.cholesky(cov)
    r = np.asarray(u, dtype=float) - mean
    sol = np.linalg.solve(L, np.moveaxis(r, -1, 0).reshape(len(L), -1))
    maha = np.sum(sol**2, axis=0).reshape(r.shape[:-1])
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (maha + logdet + len(L) * np.log(2.0 * np.pi))


def policy_log_prob(policy: SoftPolicy, t: int, state: HybridState, u_p, u_o, u_s=0):
    """Joint log density of the hybrid control under the soft policy."""
    mean, cov, _ = policy.control_distribution(t, state.mu, state.d, state.x_s)
    u_p = np.asarray(u_p, dtype=float)
    if u_p.ndim == 0:
        u_p = u_p[None]
    cont = _gauss_logpdf(u_p, mean, cov)
    disc = policy.discrete_log_probs(t)[state.d, state.x_s, u_o, u_s]
    return cont + disc


def sample_controls(policy, t: int, state: HybridState, rng: np.random.Generator):
    """Draw ``(u_p, u_o, u_s)`` for a single hybrid state."""
    mean, cov, probs = policy.control_distribution(t, np.asarray(state.mu, dtype=float),
                                                   state.d, state.x_s)
    normal = rng.standard_normal(len(mean))
    uniform = rng.random()
    return draw_controls(mean, cov, probs, normal, uniform)


def draw_controls(mean, cov, probs, normal, uniform):
    """Transform standard draws into controls (works on batches).

    ``probs`` has trailing shape ``(2, U)``; the discrete pair is picked by
    inverse CDF over the flattened table.
    """
    L = _cov_factor(cov)
    u_p = mean + np.asarray(normal) @ L.T
    flat = probs.reshape(probs.shape[:-2] + (-1,))
    cdf = np.cumsum(flat, axis=-1)
    k = (np.asarray(uniform)[..., None] >= cdf).sum(axis=-1)
    k = np.minimum(k, flat.shape[-1] - 1)
    n_us = probs.shape[-1]
    u_o, u_s = np.divmod(k, n_us)
    if np.ndim(u_o) == 0:
        return u_p, int(u_o), int(u_s)
    return u_p, u_o, u_s


def _cov_factor(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (cov + cov.T))
        return V * np.sqrt(np.clip(w, 0.0, None))
