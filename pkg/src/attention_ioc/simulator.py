"""Rollouts of the true primary state, observations, filter and policy.

Every trajectory draws all of its randomness up front from its own stream,
derived from ``(base_seed, index)``; trajectories are then stepped together
as a batch. Results are therefore independent of batch composition (a
batch of one may differ in the last bit, as BLAS takes a different path).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from .belief import CovarianceSchedule, HybridState, attention_bit, d_transition, filter_step
from .model import AttentionProblem, eval_features
from .soft_solver import _cov_factor, draw_controls


class PolicyLike(Protocol):
    def control_distribution(self, t: int, mu: np.ndarray, d: np.ndarray, x_s: np.ndarray):
        """Return ``(mean, cov, probs)``; ``probs`` has trailing shape (2, U)."""


@dataclass(frozen=True)
class FixedPolicy:
    """Time-invariant linear Gaussian control with fixed discrete probabilities."""

    gain: np.ndarray
    offset: np.ndarray
    cov: np.ndarray
    probs: np.ndarray  # (2, U)

    def control_distribution(self, t, mu, d, x_s):
        mean = np.asarray(mu) @ self.gain.T + self.offset
        probs = np.broadcast_to(self.probs, np.shape(d) + self.probs.shape)
        return mean, self.cov, probs


@dataclass(frozen=True)
class StartState:
    """Start of a rollout other than the problem's initial state.

    When ``x_p`` is omitted the true state is drawn from the belief
    ``N(mu, post_cov[t, d])``. ``controls`` forces the first step's
    ``(u_p, u_o, u_s)``.
    """

    t: int
    mu: np.ndarray
    d: int
    x_s: int
    x_p: Optional[np.ndarray] = None
    controls: Optional[tuple] = None


@dataclass
class Trajectory:
    t0: int
    x_p: np.ndarray
    mu: np.ndarray
    d: np.ndarray
    x_s: np.ndarray
    x_o: np.ndarray
    u_p: np.ndarray
    u_o: np.ndarray
    u_s: np.ndarray
    obs: np.ndarray
    features: np.ndarray


_ARRAYS = ("x_p", "mu", "d", "x_s", "x_o", "u_p", "u_o", "u_s", "obs", "features")


@dataclass
class Dataset:
    """Batch of equal-length trajectories stored as ``(n, steps, ...)`` arrays."""

    t0: int
    x_p: np.ndarray
    mu: np.ndarray
    d: np.ndarray
    x_s: np.ndarray
    x_o: np.ndarray
    u_p: np.ndarray
    u_o: np.ndarray
    u_s: np.ndarray
    obs: np.ndarray
    features: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.x_p.shape[0]

    @property
    def steps(self) -> int:
        return self.x_p.shape[1]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.t0, *(getattr(self, k)[i] for k in _ARRAYS))

    def subset(self, idx) -> "Dataset":
        """Trajectories ``idx`` (an int ``n`` selects the first ``n``)."""
        if isinstance(idx, (int, np.integer)):
            idx = slice(0, int(idx))
        meta = dict(self.metadata)
        return Dataset(self.t0, *(getattr(self, k)[idx] for k in _ARRAYS), metadata=meta)

    def rewards(self, theta) -> np.ndarray:
        """Realized reward per trajectory."""
        return self.features.sum(axis=1) @ np.asarray(theta, dtype=float)


def trajectory_seed(base_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(index),))


def _draws(problem: AttentionProblem, steps: int, seeds):
    n_x, n_u, m = problem.n_x, problem.n_u, problem.obs_H.shape[0]
    start, normal, unif = [], [], []
    for s in seeds:
        rng = np.random.default_rng(s)
        start.append(rng.standard_normal(n_x))
        normal.append(rng.standard_normal((steps, n_u + n_x + m)))
        unif.append(rng.random((steps, 2)))
    return np.array(start), np.array(normal), np.array(unif)


def _simulate(problem: AttentionProblem, schedule: CovarianceSchedule, policy: PolicyLike,
              seeds, start: Optional[StartState]) -> Dataset:
    T, n_x, n_u = problem.horizon, problem.n_x, problem.n_u
    H = problem.obs_H
    m = H.shape[0]
    n = len(seeds)
    t0 = 0 if start is None else int(start.t)
    L = T + 1 - t0
    z0, normal, unif = _draws(problem, L, seeds)
    G = _cov_factor(problem.process_noise)
    G_obs = _cov_factor(problem.obs_noise)

    x_p = np.zeros((n, L, n_x))
    mu = np.zeros((n, L, n_x))
    d = np.zeros((n, L), dtype=int)
    x_s = np.zeros((n, L), dtype=int)
    u_p = np.zeros((n, L, n_u))
    u_o = np.zeros((n, L), dtype=int)
    u_s = np.zeros((n, L), dtype=int)
    obs = np.full((n, L, n_x), np.nan)

    if start is None:
        init = problem.init_state
        x_p[:, 0] = init.x_p
        mu[:, 0] = init.x_p
        d[:, 0] = init.d
        x_s[:, 0] = init.x_s
    else:
        mu[:, 0] = start.mu
        d[:, 0] = start.d
        x_s[:, 0] = start.x_s
        if start.x_p is not None:
            x_p[:, 0] = start.x_p
        else:
            P0 = _cov_factor(schedule.post_cov[t0, start.d])
            x_p[:, 0] = np.asarray(start.mu, dtype=float) + z0 @ P0.T
    obs[:, 0] = x_p[:, 0]

    for k in range(L):
        t = t0 + k
        state = HybridState(mu[:, k], d[:, k], x_s[:, k])
        if k == 0 and start is not None and start.controls is not None:
            up, uo, us = start.controls
            u_p[:, k] = np.atleast_1d(up)
            u_o[:, k] = uo
            u_s[:, k] = us
        else:
            mean, cov, probs = policy.control_distribution(t, state.mu, state.d, state.x_s)
            u_p[:, k], u_o[:, k], u_s[:, k] = draw_controls(
                mean, cov, probs, normal[:, k, :n_u], unif[:, k, 0])
        if t == T:
            break
        eps = normal[:, k, n_u : n_u + n_x] @ G.T
        x_p[:, k + 1] = (x_p[:, k] @ problem.dyn_A[t].T + u_p[:, k] @ problem.dyn_B[t].T
                         + problem.dyn_a[t] + eps)
        d_next = d_transition(d[:, k], u_o[:, k], problem.d_max)
        noisy = x_p[:, k + 1] @ H.T + normal[:, k, n_u + n_x :] @ G_obs.T
        o = np.full((n, n_x), np.nan)
        o[:, :m] = noisy
        exact = d_next == 0
        o[exact] = x_p[exact, k + 1]
        obs[:, k + 1] = o
        nxt = filter_step(problem, schedule, t, state, u_p[:, k], u_o[:, k],
                          np.nan_to_num(o), u_s=u_s[:, k], uniform=unif[:, k, 1])
        mu[:, k + 1] = nxt.mu
        d[:, k + 1] = nxt.d
        x_s[:, k + 1] = nxt.x_s

    feats = eval_features(problem, x_p, u_p, x_s, u_s, u_o)
    return Dataset(t0, x_p, mu, d, x_s, attention_bit(d), u_p, u_o, u_s, obs, feats)


def simulate_trajectory(problem: AttentionProblem, schedule: CovarianceSchedule,
                        policy: PolicyLike, seed, start: Optional[StartState] = None) -> Trajectory:
    return _simulate(problem, schedule, policy, [seed], start).trajectory(0)


def simulate_batch(problem: AttentionProblem, schedule: CovarianceSchedule, policy: PolicyLike,
                   n: int, base_seed: int, start: Optional[StartState] = None,
                   metadata: Optional[dict] = None) -> Dataset:
    if n < 1:
        raise ValueError("n must be >= 1")
    seeds = [trajectory_seed(base_seed, i) for i in range(n)]
    data = _simulate(problem, schedule, policy, seeds, start)
    data.metadata = {"base_seed": int(base_seed), "n": int(n), "scenario": problem.name,
                     **(metadata or {})}
    return data


def empirical_feature_expectation(dataset: Dataset) -> np.ndarray:
    """Mean over trajectories of the summed per-step features (true states)."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    return dataset.features.sum(axis=1).mean(axis=0)


# --- delimited-text export -------------------------------------------------

def _fmt(x) -> str:
    return format(float(x), ".17g")


def export_dataset(dataset: Dataset, path) -> None:
    """Write one row per step plus a ``.meta.json`` sidecar."""
    path = Path(path)
    n, L = len(dataset), dataset.steps
    n_x, n_u, k = dataset.x_p.shape[2], dataset.u_p.shape[2], dataset.features.shape[2]
    theta = dataset.metadata.get("theta")
    header = (["traj", "t"] + [f"x_p{i}" for i in range(n_x)] + [f"mu{i}" for i in range(n_x)]
              + ["d", "x_s", "x_o"] + [f"u_p{i}" for i in range(n_u)] + ["u_o", "u_s"]
              + [f"obs{i}" for i in range(n_x)] + [f"phi{i}" for i in range(k)])
    if theta is not None:
        header.append("reward")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(n):
            for j in range(L):
                row = [str(i), str(dataset.t0 + j)]
                row += [_fmt(v) for v in dataset.x_p[i, j]]
                row += [_fmt(v) for v in dataset.mu[i, j]]
                row += [str(int(dataset.d[i, j])), str(int(dataset.x_s[i, j])), str(int(dataset.x_o[i, j]))]
                row += [_fmt(v) for v in dataset.u_p[i, j]]
                row += [str(int(dataset.u_o[i, j])), str(int(dataset.u_s[i, j]))]
                row += [_fmt(v) for v in dataset.obs[i, j]]
                row += [_fmt(v) for v in dataset.features[i, j]]
                if theta is not None:
                    row.append(_fmt(dataset.features[i, j] @ np.asarray(theta, dtype=float)))
                w.writerow(row)
    meta = {"t0": dataset.t0, "n": n, "steps": L, "n_x": n_x, "n_u": n_u, "n_features": k,
            **dataset.metadata}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default))


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


def import_dataset(path) -> Dataset:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".meta.json").read_text())
    n, L = meta["n"], meta["steps"]
    n_x, n_u, k = meta["n_x"], meta["n_u"], meta["n_features"]
    raw = np.zeros((n * L, 2 + 2 * n_x + 3 + n_u + 2 + n_x + k))
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row_i, row in enumerate(r):
            raw[row_i] = [float(v) for v in row[: raw.shape[1]]]
    raw = raw.reshape(n, L, -1)
    c = 2
    def take(width):
        nonlocal c
        out = raw[:, :, c : c + width]
        c += width
        return out
    x_p, mu = take(n_x), take(n_x)
    d, x_s, x_o = (take(1)[..., 0].astype(int) for _ in range(3))
    u_p = take(n_u)
    u_o, u_s = (take(1)[..., 0].astype(int) for _ in range(2))
    obs, feats = take(n_x), take(k)
    extra = {key: v for key, v in meta.items() if key not in ("t0", "n", "steps", "n_x", "n_u", "n_features")}
    return Dataset(meta["t0"], x_p, mu, d, x_s, x_o, u_p, u_o, u_s, obs, feats, metadata=extra)
