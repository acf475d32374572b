"""Hybrid attention-switching control problems.

A problem couples a time-varying linear-affine primary task (continuous
state/control, quadratic reward) with a binary attention state and a small
discrete secondary task. The lane-keeping driver instance lives here too.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

# Driver reward parameters used for the simulated experiments
# [y^2, ydot^2, alpha^2, alphadot^2, secondary, switch].
DRIVER_THETA = np.array([-0.5, -8.0, -11.0, -200.0, 0.07, -3.5])

DEFAULT_STEERING_RATIO = 1.0 / 16.0
DEFAULT_HEADING_NOISE = 0.003
DEFAULT_STEER_NOISE = 0.005


class ProblemError(ValueError):
    """Raised for malformed problems or inputs with inconsistent dimensions."""


@dataclass(frozen=True)
class SecondaryMdp:
    """Discrete secondary task.

    ``transition[o, s, us, s2]`` is the probability of moving from secondary
    state ``s`` to ``s2`` under secondary control ``us`` when the attention bit
    in effect for the step is ``o`` (1 = attending the primary task). The bit
    is the one *after* the attention control has been applied, so a secondary
    state can track the glance state of the same time step.
    """

    transition: np.ndarray
    features: np.ndarray  # (n_states, n_controls, k_s)

    @property
    def n_states(self) -> int:
        return self.transition.shape[1]

    @property
    def n_controls(self) -> int:
        return self.transition.shape[2]

    @property
    def k_s(self) -> int:
        return self.features.shape[2]


@dataclass(frozen=True)
class FeatureSpec:
    """Linear map from the primary parameters to ``vec(blk(Theta1, Theta2))``.

    ``selector`` has shape ``((n_x + n_u)**2, k_p)``; vec is column-major.
    """

    selector: np.ndarray
    n_x: int
    n_u: int

    @property
    def k_p(self) -> int:
        return self.selector.shape[1]

    @property
    def n_z(self) -> int:
        return self.n_x + self.n_u

    def reward_matrix(self, theta_p) -> np.ndarray:
        """``blk(Theta1, Theta2)`` for the given primary parameters."""
        n = self.n_z
        W = (self.selector @ np.asarray(theta_p, dtype=float)).reshape(n, n, order="F")
        return 0.5 * (W + W.T)

    def theta_blocks(self, theta_p) -> tuple[np.ndarray, np.ndarray]:
        W = self.reward_matrix(theta_p)
        return W[: self.n_x, : self.n_x], W[self.n_x :, self.n_x :]

    def basis(self) -> np.ndarray:
        """Per-parameter symmetric matrices ``E_i`` with ``phi_i = z' E_i z``."""
        n = self.n_z
        E = self.selector.T.reshape(self.k_p, n, n).transpose(0, 2, 1)
        return 0.5 * (E + E.transpose(0, 2, 1))

    @classmethod
    def diagonal(cls, n_x: int, n_u: int, entries: Sequence[Optional[int]]) -> "FeatureSpec":
        """Selector placing parameter ``entries[j]`` on diagonal position ``j``.

        ``None`` leaves that diagonal entry at zero.
        """
        n = n_x + n_u
        if len(entries) != n:
            raise ProblemError(f"need {n} diagonal entries, got {len(entries)}")
        k_p = max(e for e in entries if e is not None) + 1
        S = np.zeros((n * n, k_p))
        for j, e in enumerate(entries):
            if e is not None:
                S[j + j * n, e] = 1.0
        return cls(S, n_x, n_u)


@dataclass(frozen=True)
class RewardParams:
    theta_p: np.ndarray
    theta_s: np.ndarray
    theta_o: float

    def __post_init__(self):
        object.__setattr__(self, "theta_p", np.atleast_1d(np.asarray(self.theta_p, dtype=float)))
        object.__setattr__(self, "theta_s", np.atleast_1d(np.asarray(self.theta_s, dtype=float)))
        object.__setattr__(self, "theta_o", float(self.theta_o))
        if self.theta_o >= 0:
            warnings.warn(f"switching parameter theta_o={self.theta_o} is not a cost (>= 0)",
                          stacklevel=2)

    @property
    def feasible(self) -> bool:
        return bool(np.all(self.theta_p < 0))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.theta_p, self.theta_s, [self.theta_o]])

    @classmethod
    def from_vector(cls, theta, k_p: int, k_s: int) -> "RewardParams":
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != k_p + k_s + 1:
            raise ProblemError(f"theta needs {k_p + k_s + 1} entries, got {theta.size}")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return cls(theta[:k_p], theta[k_p : k_p + k_s], theta[-1])


@dataclass(frozen=True)
class InitialState:
    x_p: np.ndarray
    d: int = 0
    x_s: int = 0


@dataclass(frozen=True)
class AttentionProblem:
    """Hybrid control problem with horizon ``T`` (reward at t = 0..T).

    Dynamics arrays are per step: ``dyn_A[t]`` maps step ``t`` to ``t + 1`` for
    t = 0..T-1.
    """

    horizon: int
    dt: float
    dyn_A: np.ndarray  # (T, n_x, n_x)
    dyn_B: np.ndarray  # (T, n_x, n_u)
    dyn_a: np.ndarray  # (T, n_x)
    process_noise: np.ndarray
    obs_H: np.ndarray  # (m, n_x)
    obs_noise: np.ndarray  # (m, m)
    sub_mdp: SecondaryMdp
    feature_spec: FeatureSpec
    d_max: int
    init_state: InitialState
    name: str = ""

    @property
    def n_x(self) -> int:
        return self.dyn_A.shape[1]

    @property
    def n_u(self) -> int:
        return self.dyn_B.shape[2]

    @property
    def n_z(self) -> int:
        return self.n_x + self.n_u

    @property
    def n_d(self) -> int:
        return self.d_max + 1

    @property
    def k_p(self) -> int:
        return self.feature_spec.k_p

    @property
    def k_s(self) -> int:
        return self.sub_mdp.k_s

    @property
    def n_theta(self) -> int:
        return self.k_p + self.k_s + 1

    def split_theta(self, theta) -> RewardParams:
        if isinstance(theta, RewardParams):
            return theta
        return RewardParams.from_vector(theta, self.k_p, self.k_s)

    def theta_vector(self, theta) -> np.ndarray:
        if isinstance(theta, RewardParams):
            vec = theta.as_vector()
        else:
            vec = np.asarray(theta, dtype=float).ravel()
        if vec.size != self.n_theta:
            raise ProblemError(f"theta needs {self.n_theta} entries, got {vec.size}")
        return vec


def _psd_violation(M: np.ndarray, tol: float = 1e-10) -> Optional[str]:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        return "not square"
    if np.max(np.abs(M - M.T), initial=0.0) > tol * max(1.0, np.max(np.abs(M), initial=0.0)):
        return "not symmetric"
    if M.size and np.linalg.eigvalsh(0.5 * (M + M.T)).min() < -tol * max(1.0, np.abs(M).max()):
        return "not PSD"
    return None


def validate_problem(problem: AttentionProblem) -> list[str]:
    """List violated invariants; an empty list means the problem is usable."""
    report = []
    T = problem.horizon
    if T < 0:
        report.append("horizon must be >= 0")
    A, B, a = problem.dyn_A, problem.dyn_B, problem.dyn_a
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        report.append(f"dyn_A must be (T, n_x, n_x), got {A.shape}")
        return report
    n_x = A.shape[1]
    if A.shape[0] != T:
        report.append(f"dyn_A covers {A.shape[0]} steps, expected {T}")
    if B.ndim != 3 or B.shape[:2] != (T, n_x):
        report.append(f"dyn_B must be (T, n_x, n_u), got {B.shape}")
    if a.shape != (T, n_x):
        report.append(f"dyn_a must be (T, n_x), got {a.shape}")
    if problem.process_noise.shape != (n_x, n_x):
        report.append(f"process_noise must be ({n_x}, {n_x})")
    else:
        bad = _psd_violation(problem.process_noise)
        if bad:
            report.append(f"process_noise {bad}")
    H, R = problem.obs_H, problem.obs_noise
    if H.ndim != 2 or H.shape[1] != n_x:
        report.append(f"obs_H must be (m, {n_x}), got {H.shape}")
    elif R.shape != (H.shape[0], H.shape[0]):
        report.append(f"obs_noise must be ({H.shape[0]}, {H.shape[0]}), got {R.shape}")
    else:
        bad = _psd_violation(R)
        if bad:
            report.append(f"obs_noise {bad}")
    mdp = problem.sub_mdp
    P = mdp.transition
    if P.ndim != 4 or P.shape[0] != 2 or P.shape[1] != P.shape[3]:
        report.append(f"sub_mdp transition must be (2, S, U, S), got {P.shape}")
    else:
        if np.any(P < 0):
            report.append("sub_mdp transition has negative entries")
        rows = P.sum(axis=3)
        if np.max(np.abs(rows - 1.0)) > 1e-12:
            report.append("sub_mdp transition rows not stochastic")
        if mdp.features.shape[:2] != P.shape[1:3]:
            report.append("sub_mdp features do not match states/controls")
    fs = problem.feature_spec
    if B.ndim == 3 and (fs.n_x, fs.n_u) != (n_x, B.shape[2]):
        report.append("feature_spec dimensions do not match dynamics")
    if fs.selector.shape[0] != fs.n_z**2:
        report.append("feature_spec selector has wrong row count")
    if problem.d_max < 1:
        report.append("d_max must be >= 1")
    init = problem.init_state
    if np.asarray(init.x_p).shape != (n_x,):
        report.append("init_state x_p has wrong dimension")
    if not 0 <= init.d <= problem.d_max:
        report.append("init_state d out of range")
    if P.ndim == 4 and not 0 <= init.x_s < P.shape[1]:
        report.append("init_state x_s out of range")
    return report


def eval_features(problem: AttentionProblem, x_p, u_p, x_s, u_s, u_o) -> np.ndarray:
    """Concatenated ``[phi_p; phi_s; phi_o]``; the reward is ``theta @ features``.

    Accepts batches: leading dimensions of ``x_p``/``u_p`` broadcast against
    the integer arrays ``x_s``, ``u_s``, ``u_o``.
    """
    x_p = np.asarray(x_p, dtype=float)
    u_p = np.asarray(u_p, dtype=float)
    if u_p.ndim == 0:
        u_p = u_p[None]
    if x_p.shape[-1] != problem.n_x or u_p.shape[-1] != problem.n_u:
        raise ProblemError(
            f"expected state dim {problem.n_x} and control dim {problem.n_u}, "
            f"got {x_p.shape[-1]} and {u_p.shape[-1]}"
        )
    lead = np.broadcast_shapes(x_p.shape[:-1], u_p.shape[:-1])
    z = np.concatenate([np.broadcast_to(x_p, lead + x_p.shape[-1:]),
                        np.broadcast_to(u_p, lead + u_p.shape[-1:])], axis=-1)
    E = problem.feature_spec.basis()
    phi_p = np.einsum("...i,kij,...j->...k", z, E, z)
    x_s = np.asarray(x_s)
    u_s = np.asarray(u_s)
    phi_s = problem.sub_mdp.features[x_s, u_s]
    phi_o = np.asarray(u_o, dtype=float)[..., None]
    lead = np.broadcast_shapes(phi_p.shape[:-1], phi_s.shape[:-1], phi_o.shape[:-1])
    parts = [np.broadcast_to(p, lead + p.shape[-1:]) for p in (phi_p, phi_s, phi_o)]
    return np.concatenate(parts, axis=-1)


@dataclass(frozen=True)
class DriverConfig:
    """Lane-keeping scenario. ``speed`` and ``curvature`` may be per-step arrays."""

    speed: float | Sequence[float] = 500.0 / 36.0
    curvature: float | Sequence[float] = 14e-4
    steering_ratio: float = DEFAULT_STEERING_RATIO
    dt: float = 0.04
    horizon: int = 175
    process_noise: Optional[np.ndarray] = None
    d_max: Optional[int] = None
    discretization: str = "euler"
    init_x_p: Sequence[float] = field(default=(0.0, 0.0, 0.0, 0.0))


def driver_process_noise(speed: float, heading_std: float = DEFAULT_HEADING_NOISE,
                         steer_std: float = DEFAULT_STEER_NOISE) -> np.ndarray:
    """Per-step disturbance on heading and steering angle.

    The heading disturbance also enters ``ydot`` (scaled by the speed) so that
    ``ydot = v * phi`` holds along noisy trajectories.
    """
    G = np.array([[0.0, 0.0], [speed, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return G @ np.diag([heading_std**2, steer_std**2]) @ G.T


def _per_step(value, T: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(T, float(arr))
    if arr.shape != (T,):
        raise ProblemError(f"{name} must be scalar or length {T}, got shape {arr.shape}")
    return arr


def _driver_step(v: float, kappa: float, c: float, dt: float, method: str):
    """One step of the kinematic model on [y, phi, alpha], then ydot = v * phi."""
    Ac = np.array([[0.0, v, 0.0], [0.0, 0.0, c * v], [0.0, 0.0, 0.0]])
    Bc = np.array([[0.0], [0.0], [1.0]])
    ac = np.array([0.0, -v * kappa, 0.0])
    if method == "euler":
        Ad = np.eye(3) + dt * Ac
        Bd = dt * Bc
        ad = dt * ac
    elif method == "zoh":
        M = np.zeros((5, 5))
        M[:3, :3] = Ac
        M[:3, 3:4] = Bc
        M[:3, 4] = ac
        E = expm(M * dt)
        Ad, Bd, ad = E[:3, :3], E[:3, 3:4], E[:3, 4]
    else:
        raise ProblemError(f"unknown discretization {method!r}")
    # embed into [y, ydot, phi, alpha]; ydot_{t+1} = v * phi_{t+1}
    idx = [0, 2, 3]
    A = np.zeros((4, 4))
    B = np.zeros((4, 1))
    a = np.zeros(4)
    for r, i in enumerate(idx):
        A[i, idx] = Ad[r]
        B[i] = Bd[r]
        a[i] = ad[r]
    A[1] = v * A[2]
    B[1] = v * B[2]
    a[1] = v * a[2]
    return A, B, a


def driver_sub_mdp() -> SecondaryMdp:
    """Secondary state is 1 exactly while the driver looks away (d > 0)."""
    P = np.zeros((2, 2, 1, 2))
    P[1, :, 0, 0] = 1.0  # attending the road -> x_s = 0
    P[0, :, 0, 1] = 1.0  # looking away -> x_s = 1
    feats = np.array([[[0.0]], [[1.0]]])
    return SecondaryMdp(P, feats)


def driver_feature_spec() -> FeatureSpec:
    # z = [y, ydot, phi, alpha, alphadot]
    return FeatureSpec.diagonal(4, 1, [0, 1, None, 2, 3])


def build_driver_problem(cfg: DriverConfig, name: str = "") -> AttentionProblem:
    if cfg.dt <= 0:
        raise ProblemError("dt must be > 0")
    if cfg.horizon < 1:
        raise ProblemError("horizon must be >= 1")
    T = int(cfg.horizon)
    v = _per_step(cfg.speed, T, "speed")
    kappa = _per_step(cfg.curvature, T, "curvature")
    if np.any(v <= 0):
        raise ProblemError("speed must be > 0")
    As, Bs, as_ = zip(*(_driver_step(v[t], kappa[t], cfg.steering_ratio, cfg.dt,
                                     cfg.discretization) for t in range(T)))
    if cfg.process_noise is None:
        Q = driver_process_noise(float(np.mean(v)))
    else:
        Q = np.asarray(cfg.process_noise, dtype=float)
        if Q.ndim == 1:
            Q = np.diag(Q)
    d_max = T if cfg.d_max is None else int(cfg.d_max)
    problem = AttentionProblem(
        horizon=T,
        dt=float(cfg.dt),
        dyn_A=np.stack(As),
        dyn_B=np.stack(Bs),
        dyn_a=np.stack(as_),
        process_noise=Q,
        obs_H=np.array([[0.0, 0.0, 0.0, 1.0]]),
        obs_noise=np.zeros((1, 1)),
        sub_mdp=driver_sub_mdp(),
        feature_spec=driver_feature_spec(),
        d_max=d_max,
        init_state=InitialState(np.asarray(cfg.init_x_p, dtype=float), 0, 0),
        name=name,
    )
    report = validate_problem(problem)
    if report:
        raise ProblemError("; ".join(report))
    return problem
