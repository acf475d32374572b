import numpy as np
import pytest

from attention_ioc.belief import attention_bit, d_transition, tabulate_covariances
from attention_ioc.model import DRIVER_THETA, eval_features
from attention_ioc.simulator import (
    FixedPolicy,
    StartState,
    empirical_feature_expectation,
    export_dataset,
    import_dataset,
    simulate_batch,
    simulate_trajectory,
    trajectory_seed,
)
from attention_ioc.soft_solver import solve_soft_policy

from helpers import small_driver


@pytest.fixture(scope="module")
def driver():
    p = small_driver()
    s = tabulate_covariances(p)
    return p, s, solve_soft_policy(p, s, DRIVER_THETA)


@pytest.fixture(scope="module")
def batch(driver):
    p, s, pol = driver
    return simulate_batch(p, s, pol, 64, 123, metadata={"theta": DRIVER_THETA.tolist()})


def test_same_seed_same_data(driver, batch):
    p, s, pol = driver
    again = simulate_batch(p, s, pol, 64, 123, metadata={"theta": DRIVER_THETA.tolist()})
    for name in ("x_p", "mu", "d", "x_s", "u_p", "u_o", "u_s", "features"):
        np.testing.assert_array_equal(getattr(batch, name), getattr(again, name))


def test_single_trajectory_matches_batch(driver, batch):
    p, s, pol = driver
    one = simulate_trajectory(p, s, pol, trajectory_seed(123, 0))
    np.testing.assert_allclose(one.x_p, batch.x_p[0], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(one.u_o, batch.u_o[0])
    single = simulate_batch(p, s, pol, 1, 123)
    np.testing.assert_array_equal(single.x_p[0], one.x_p)
    # a trajectory does not depend on how many others share the batch
    small = simulate_batch(p, s, pol, 5, 123)
    np.testing.assert_array_equal(small.x_p, batch.x_p[:5])


def test_different_seeds_differ(driver, batch):
    p, s, pol = driver
    other = simulate_batch(p, s, pol, 64, 124)
    assert not np.array_equal(other.x_p, batch.x_p)
    assert len({tuple(batch.u_p[i, :3, 0]) for i in range(len(batch))}) == len(batch)


def test_attention_bookkeeping(driver, batch):
    p, _, _ = driver
    np.testing.assert_array_equal(batch.x_o, attention_bit(batch.d))
    np.testing.assert_array_equal(batch.d[:, 1:], d_transition(batch.d[:, :-1], batch.u_o[:, :-1], p.d_max))
    assert batch.d.max() <= p.d_max


def test_attended_steps_observe_true_state(batch):
    exact = batch.d == 0
    np.testing.assert_array_equal(batch.obs[exact], batch.x_p[exact])
    np.testing.assert_array_equal(batch.mu[exact], batch.x_p[exact])
    # looking away only the steering angle is seen, noise free, in the first slot
    away = ~exact
    np.testing.assert_array_equal(batch.obs[away][:, 0], batch.x_p[away][:, 3])
    assert np.all(np.isnan(batch.obs[away][:, 1:]))


def test_initial_state_and_dynamics(driver, batch):
    p, _, _ = driver
    np.testing.assert_array_equal(batch.x_p[:, 0], np.tile(p.init_state.x_p, (len(batch), 1)))
    assert batch.steps == p.horizon + 1
    t = 4
    pred = batch.x_p[:, t] @ p.dyn_A[t].T + batch.u_p[:, t] @ p.dyn_B[t].T + p.dyn_a[t]
    resid = batch.x_p[:, t + 1] - pred
    # the lateral position carries no noise in this instance
    np.testing.assert_allclose(resid[:, 0], 0.0, atol=1e-14)


def test_reward_accounting(driver, batch):
    p, _, _ = driver
    feats = eval_features(p, batch.x_p, batch.u_p, batch.x_s, batch.u_s, batch.u_o)
    np.testing.assert_allclose(batch.features, feats)
    np.testing.assert_allclose(batch.rewards(DRIVER_THETA), feats.sum(axis=1) @ DRIVER_THETA)
    np.testing.assert_allclose(empirical_feature_expectation(batch), feats.sum(axis=1).mean(axis=0))


def test_subset_takes_first(batch):
    sub = batch.subset(4)
    assert len(sub) == 4
    np.testing.assert_array_equal(sub.u_p, batch.u_p[:4])


def test_export_import_round_trip(tmp_path, batch):
    path = tmp_path / "data.csv"
    export_dataset(batch, path)
    back = import_dataset(path)
    for name in ("x_p", "mu", "d", "x_s", "x_o", "u_p", "u_o", "u_s", "features"):
        np.testing.assert_array_equal(getattr(back, name), getattr(batch, name))
    np.testing.assert_array_equal(np.isnan(back.obs), np.isnan(batch.obs))
    assert back.metadata["theta"] == DRIVER_THETA.tolist()
    header = path.read_text().splitlines()[0].split(",")
    assert header[-1] == "reward"


def test_start_state_forces_first_controls(driver):
    p, s, pol = driver
    start = StartState(5, np.zeros(4), 2, 1, controls=(np.array([0.25]), 1, 0))
    data = simulate_batch(p, s, pol, 10, 0, start=start)
    assert data.t0 == 5 and data.steps == p.horizon - 4
    np.testing.assert_array_equal(data.u_p[:, 0, 0], 0.25)
    np.testing.assert_array_equal(data.u_o[:, 0], 1)
    np.testing.assert_array_equal(data.d[:, 1], 0)


def test_fixed_policy_rollout(driver):
    p, s, _ = driver
    probs = np.array([[1.0], [0.0]])
    pol = FixedPolicy(np.zeros((1, 4)), np.zeros(1), np.array([[1e-30]]), probs)
    data = simulate_batch(p, s, pol, 3, 9)
    np.testing.assert_array_equal(data.u_o, 0)
    np.testing.assert_array_equal(data.d, 0)


def test_empty_batch_rejected(driver):
    p, s, pol = driver
    with pytest.raises(ValueError):
        simulate_batch(p, s, pol, 0, 1)
    with pytest.raises(ValueError):
        empirical_feature_expectation(simulate_batch(p, s, pol, 2, 1).subset(0))
