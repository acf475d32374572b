"""Small problem builders shared by the tests."""
import numpy as np

from attention_ioc.model import (
    AttentionProblem,
    DriverConfig,
    FeatureSpec,
    InitialState,
    SecondaryMdp,
    build_driver_problem,
)

SMALL_DRIVER = DriverConfig(horizon=20, d_max=10)


def small_driver(**kw) -> AttentionProblem:
    base = dict(horizon=20, d_max=10)
    base.update(kw)
    return build_driver_problem(DriverConfig(**base))


def random_mdp(rng, S=2, U=2, k_s=1) -> SecondaryMdp:
    P = rng.random((2, S, U, S)) + 0.1
    P /= P.sum(axis=-1, keepdims=True)
    return SecondaryMdp(P, rng.normal(size=(S, U, k_s)))


def random_problem(rng, n_x=3, n_u=1, T=8, d_max=4, S=2, U=2, m=1, obs_noise=0.05,
                   noise=0.01) -> AttentionProblem:
    """Generic stable instance with one diagonal reward parameter per z-entry."""
    A = np.eye(n_x) + 0.1 * rng.normal(size=(n_x, n_x))
    A /= max(1.0, np.abs(np.linalg.eigvals(A)).max() / 1.02)
    B = rng.normal(size=(n_x, n_u)) * 0.3
    a = rng.normal(size=n_x) * 0.05
    G = rng.normal(size=(n_x, n_x))
    Q = noise * G @ G.T / n_x
    H = rng.normal(size=(m, n_x))
    R = obs_noise * np.eye(m)
    spec = FeatureSpec.diagonal(n_x, n_u, list(range(n_x + n_u)))
    return AttentionProblem(
        horizon=T, dt=0.1,
        dyn_A=np.repeat(A[None], T, axis=0), dyn_B=np.repeat(B[None], T, axis=0),
        dyn_a=np.repeat(a[None], T, axis=0), process_noise=Q, obs_H=H, obs_noise=R,
        sub_mdp=random_mdp(rng, S, U), feature_spec=spec, d_max=d_max,
        init_state=InitialState(rng.normal(size=n_x) * 0.5, 0, 0), name="random",
    )


def random_theta(rng, problem: AttentionProblem) -> np.ndarray:
    tp = -rng.uniform(0.2, 2.0, size=problem.k_p)
    ts = rng.normal(size=problem.k_s) * 0.3
    to = -rng.uniform(0.1, 1.5)
    return np.concatenate([tp, ts, [to]])


def scalar_problem(T=5, q=0.3, A=1.0, B=1.0, a=0.0, H=0.0, r=0.0, d_max=None,
                   mdp=None) -> AttentionProblem:
    """1-D primary task with one control; reward parameters [Theta1, Theta2]."""
    if mdp is None:
        mdp = SecondaryMdp(np.ones((2, 1, 1, 1)), np.zeros((1, 1, 1)))
    return AttentionProblem(
        horizon=T, dt=1.0,
        dyn_A=np.full((T, 1, 1), A), dyn_B=np.full((T, 1, 1), B), dyn_a=np.full((T, 1), a),
        process_noise=np.array([[q]]), obs_H=np.array([[H]]), obs_noise=np.array([[r]]),
        sub_mdp=mdp, feature_spec=FeatureSpec.diagonal(1, 1, [0, 1]),
        d_max=T if d_max is None else d_max, init_state=InitialState(np.zeros(1), 0, 0),
        name="scalar",
    )


def estimation_problem():
    """Well-identified 2-D instance used by the estimator consistency checks."""
    p = random_problem(np.random.default_rng(0), n_x=2, T=40, d_max=40, noise=0.2, obs_noise=0.2)
    return p, np.array([-1.0, -0.8, -1.2, 0.6, -0.9])


def make_dataset(mu, u_p, d=None, x_s=None, u_o=None):
    """Dataset with only the fields the regression baseline reads filled in."""
    from attention_ioc.simulator import Dataset

    mu = np.asarray(mu, dtype=float)
    n, L, n_x = mu.shape
    u_p = np.asarray(u_p, dtype=float).reshape(n, L, -1)
    zeros = np.zeros((n, L), dtype=int)
    d = zeros if d is None else np.asarray(d, dtype=int)
    x_s = zeros if x_s is None else np.asarray(x_s, dtype=int)
    u_o = zeros if u_o is None else np.asarray(u_o, dtype=int)
    return Dataset(0, mu.copy(), mu, d, x_s, (d == 0).astype(int), u_p, u_o, zeros.copy(),
                   mu.copy(), np.zeros((n, L, 1)))
