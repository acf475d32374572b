"""Belief-MDP reduction: Kalman covariance tables indexed by glance duration.

Because an attended step observes the primary state exactly, the posterior
covariance only depends on the time step ``t`` and the number of steps ``d``
since the last exact observation. All covariances are therefore tabulated
once per problem, independent of the reward parameters.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import AttentionProblem, ProblemError


class CovarianceError(ArithmeticError):
    """A tabulated covariance lost positive semidefiniteness."""


def d_transition(d, u_o, d_max: int):
    """Glance duration after applying attention control ``u_o``.

    ``d == 0`` means the primary task is attended. Switching (``u_o == 1``)
    flips attention; looking away keeps counting up to ``d_max``.
    """
    d = np.asarray(d)
    u_o = np.asarray(u_o)
    attending_next = (d == 0) ^ (u_o == 1)
    out = np.where(attending_next, 0, np.minimum(d + 1, d_max))
    return out if out.ndim else int(out)


def attention_bit(d):
    """``x_o = 1`` exactly when ``d == 0``."""
    return (np.asarray(d) == 0).astype(int)


@dataclass(frozen=True)
class CovarianceSchedule:
    """Precomputed filter quantities.

    Attributes:
        post_cov: ``(T+1, D, n, n)`` posterior covariance at (t, d).
        pred_cov: ``(T, D, n, n)``; ``pred_cov[t, d]`` is the one-step prediction
            from ``post_cov[t, d]``.
        gain: ``(T, D, n, m)`` Kalman gain for an inattentive step from (t, d).
        mean_update_cov: ``(T, D, 2, n, n)``; covariance of the next belief mean
            given (t, d) and attention control ``u_o``.
        next_d: ``(D, 2)`` successor glance duration.
    """

    post_cov: np.ndarray
    pred_cov: np.ndarray
    gain: np.ndarray
    mean_update_cov: np.ndarray
    next_d: np.ndarray

    @property
    def horizon(self) -> int:
        return self.pred_cov.shape[0]


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _check_psd(M: np.ndarray, what: str, t: int) -> None:
    if M.size == 0:
        return
    eig = np.linalg.eigvalsh(M)
    scale = max(1.0, float(np.abs(M).max()))
    if eig.min() < -1e-9 * scale:
        raise CovarianceError(f"{what} at t={t} not PSD (min eigenvalue {eig.min():.3e})")


def tabulate_covariances(problem: AttentionProblem) -> CovarianceSchedule:
    T, D, n = problem.horizon, problem.n_d, problem.n_x
    H, R, Q = problem.obs_H, problem.obs_noise, problem.process_noise
    m = H.shape[0]
    next_d = np.stack([d_transition(np.arange(D), u, problem.d_max) for u in (0, 1)], axis=1)

    post = np.zeros((T + 1, D, n, n))
    pred = np.zeros((T, D, n, n))
    gain = np.zeros((T, D, n, m))
    mu_cov = np.zeros((T, D, 2, n, n))
    for t in range(T):
        A = problem.dyn_A[t]
        S_hat = _sym(A @ post[t] @ A.T + Q)
        innov = _sym(H @ S_hat @ H.T + R)
        K = S_hat @ H.T @ np.linalg.pinv(innov, hermitian=True)
        info = _sym(K @ H @ S_hat)
        _check_psd(info, "mean update covariance", t)
        posterior = _sym(S_hat - info)
        _check_psd(posterior, "posterior covariance", t + 1)
        pred[t] = S_hat
        gain[t] = K
        for u in (0, 1):
            exact = next_d[:, u] == 0
            mu_cov[t, :, u] = np.where(exact[:, None, None], S_hat, info)
        # the d_max bucket inherits from d_max - 1, i.e. longer glances reuse it
        post[t + 1, 1:] = posterior[:-1]
    return CovarianceSchedule(post, pred, gain, mu_cov, next_d)


@dataclass(frozen=True)
class HybridState:
    """Belief mean, glance duration and secondary state (scalars or batches)."""

    mu: np.ndarray
    d: np.ndarray
    x_s: np.ndarray


def advance_secondary(problem: AttentionProblem, x_s, u_s, x_o_next, uniform=None):
    """Next secondary state; sampled by inverse CDF when ``uniform`` is given.

    Without ``uniform`` the most likely successor is returned, which is exact
    for deterministic secondary tasks.
    """
    probs = problem.sub_mdp.transition[np.asarray(x_o_next), np.asarray(x_s), np.asarray(u_s)]
    if uniform is None:
        return np.argmax(probs, axis=-1)
    cdf = np.cumsum(probs, axis=-1)
    idx = (np.asarray(uniform)[..., None] >= cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def filter_step(problem: AttentionProblem, schedule: CovarianceSchedule, t: int,
                state: HybridState, u_p, u_o, observation, u_s=0,
                uniform: Optional[np.ndarray] = None) -> HybridState:
    """Propagate the hybrid belief from step ``t`` to ``t + 1``.

    ``observation`` is the full primary state when the next step is attended
    and the ``H``-projected measurement otherwise; batches pass arrays of the
    full width ``n_x`` with unused trailing entries ignored.
    """
    mu = np.asarray(state.mu, dtype=float)
    u_p = np.asarray(u_p, dtype=float)
    if u_p.ndim == 0:
        u_p = u_p[None]
    if mu.shape[-1] != problem.n_x or u_p.shape[-1] != problem.n_u:
        raise ProblemError("belief mean or control has the wrong dimension")
    d = np.asarray(state.d)
    d_next = np.asarray(d_transition(d, u_o, problem.d_max))
    A, B, a = problem.dyn_A[t], problem.dyn_B[t], problem.dyn_a[t]
    pred = mu @ A.T + u_p @ B.T + a
    obs = np.asarray(observation, dtype=float)
    m = problem.obs_H.shape[0]
    K = schedule.gain[t, d]
    innov = obs[..., :m] - pred @ problem.obs_H.T
    corrected = pred + np.einsum("...ij,...j->...i", K, innov)
    exact = (d_next == 0)[..., None]
    if obs.shape[-1] < problem.n_x:
        if np.any(exact):
            raise ProblemError("attended step needs the full primary state as observation")
        obs = np.zeros(obs.shape[:-1] + (problem.n_x,))
    mu_next = np.where(exact, obs, corrected)
    x_s_next = advance_secondary(problem, state.x_s, u_s, attention_bit(d_next), uniform)
    return HybridState(mu_next, d_next if d_next.ndim else int(d_next),
                       x_s_next if np.ndim(x_s_next) else int(x_s_next))


def expected_belief_reward(Theta1, mu, Sigma) -> float:
    """Expected quadratic state reward under a Gaussian belief."""
    Theta1 = np.asarray(Theta1, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return float(mu @ Theta1 @ mu + np.trace(Theta1 @ np.asarray(Sigma, dtype=float)))
