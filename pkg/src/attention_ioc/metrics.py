"""Evaluation metrics: glance-duration KL, temporal Gaussian KL, reward RD, lateral SE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulator import Dataset

REG = 1e-10


def d_histogram(dataset: Dataset, d_max: int, smoothing_eps: float = 1e-6,
                per_step: bool = False) -> np.ndarray:
    """Empirical distribution of the glance duration.

    Pooled over steps and trajectories by default; ``per_step`` returns one
    distribution per time step instead (shape ``(steps, d_max + 1)``).
    """
    d = np.asarray(dataset.d)
    if per_step:
        counts = np.stack([np.bincount(d[:, k], minlength=d_max + 1)[: d_max + 1]
                           for k in range(d.shape[1])]).astype(float)
    else:
        counts = np.bincount(d.ravel(), minlength=d_max + 1)[: d_max + 1].astype(float)
    counts = counts + smoothing_eps
    return counts / counts.sum(axis=-1, keepdims=True)


def kl_discrete(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    support = p > 0
    if np.any(q[support] <= 0):
        raise ValueError("q has zero mass where p is positive")
    return float(np.sum(p[support] * (np.log(p[support]) - np.log(q[support]))))


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray  # (steps, n)
    cov: np.ndarray  # (steps, n, n)
    count: np.ndarray  # (steps,)

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "GaussianSummary":
        return cls.from_samples(dataset.x_p)

    @classmethod
    def from_samples(cls, x) -> "GaussianSummary":
        """Per-step mean and unbiased covariance of ``x`` shaped (n, steps, dim)."""
        x = np.asarray(x, dtype=float)
        n, L, dim = x.shape
        mean = x.mean(axis=0)
        r = x - mean
        cov = np.einsum("nti,ntj->tij", r, r) / max(n - 1, 1)
        if n < dim + 2:
            cov = cov + REG * np.eye(dim)
        return cls(mean, 0.5 * (cov + np.swapaxes(cov, 1, 2)), np.full(L, n))


def _gauss_kl(mu0, S0, mu1, S1) -> float:
    """KL(N(mu0, S0) || N(mu1, S1))."""
    dim = len(mu0)
    try:
        L1 = np.linalg.cholesky(S1)
        L0 = np.linalg.cholesky(S0)
    except np.linalg.LinAlgError:
        raise ValueError("covariance not positive definite after regularization")
    A = np.linalg.solve(L1, L0)
    b = np.linalg.solve(L1, mu1 - mu0)
    logdet1 = 2.0 * np.sum(np.log(np.diag(L1)))
    logdet0 = 2.0 * np.sum(np.log(np.diag(L0)))
    return 0.5 * (np.sum(A**2) + b @ b - dim + logdet1 - logdet0)


def kl_gaussian_temporal(a: GaussianSummary, b: GaussianSummary, reg: float = REG) -> float:
    """Mean over time steps of ``KL(N_a(t) || N_b(t))``.

    Both covariances get ``reg * I`` added so that degenerate directions (the
    deterministic initial state, exactly coupled states) compare finitely.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError("summaries cover different horizons or dimensions")
    eye = reg * np.eye(a.mean.shape[1])
    total = sum(_gauss_kl(a.mean[t], a.cov[t] + eye, b.mean[t], b.cov[t] + eye)
                for t in range(a.mean.shape[0]))
    return float(total / a.mean.shape[0])


def reward_rd(theta, theta_prime) -> float:
    """Mean relative deviation of ``theta_prime`` from the reference ``theta``."""
    theta = np.asarray(theta, dtype=float)
    theta_prime = np.asarray(theta_prime, dtype=float)
    if np.any(theta == 0):
        raise ValueError("reference parameters must be nonzero")
    return float(np.mean(np.abs(theta_prime - theta) / np.abs(theta)))


def lateral_se(reference_y, rollouts, index: int = 0) -> float:
    """Expected mean squared deviation of rolled-out lateral positions.

    ``rollouts`` is a :class:`Dataset` (``x_p[..., index]`` is used) or an
    array of shape ``(n, steps)``.
    """
    ref = np.asarray(reference_y, dtype=float)
    ys = rollouts.x_p[..., index] if isinstance(rollouts, Dataset) else np.asarray(rollouts, dtype=float)
    if ys.shape[-1] != ref.shape[-1]:
        raise ValueError("rollouts and reference differ in length")
    return float(np.mean(np.mean((ys - ref) ** 2, axis=-1)))
