from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attention_ioc.belief import (
    HybridState,
    attention_bit,
    d_transition,
    expected_belief_reward,
    filter_step,
    tabulate_covariances,
)
from attention_ioc.model import ProblemError

from helpers import random_problem, scalar_problem, small_driver


@pytest.mark.parametrize("d,u_o,expected", [(0, 0, 0), (0, 1, 1), (3, 1, 0), (3, 0, 4), (10, 0, 10)])
def test_d_transition_examples(d, u_o, expected):
    assert d_transition(d, u_o, 10) == expected


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.data())
def test_d_transition_stays_in_range(d_max, data):
    d = data.draw(st.integers(0, d_max))
    u = data.draw(st.integers(0, 1))
    nd = d_transition(d, u, d_max)
    assert 0 <= nd <= d_max
    # attention bit flips exactly when u_o = 1
    assert attention_bit(nd) == (attention_bit(d) ^ u)


def test_zero_process_noise_gives_zero_covariance():
    p = replace(small_driver(), process_noise=np.zeros((4, 4)))
    s = tabulate_covariances(p)
    assert np.all(s.post_cov == 0)
    assert np.all(s.mean_update_cov == 0)


def test_unobserved_random_walk_grows_linearly():
    q, T = 0.3, 6
    s = tabulate_covariances(scalar_problem(T=T, q=q))
    for t in range(T + 1):
        for d in range(T + 1):
            # an exact observation at t = 0 caps the uncertainty at t * q
            want = min(d, t) * q if d > 0 else 0.0
            assert s.post_cov[t, d, 0, 0] == pytest.approx(want, abs=1e-14)


def test_driver_steering_angle_exactly_known():
    s = tabulate_covariances(small_driver())
    np.testing.assert_allclose(s.post_cov[:, :, 3, :], 0.0, atol=1e-15)
    np.testing.assert_allclose(s.post_cov[:, :, :, 3], 0.0, atol=1e-15)
    assert s.post_cov[5, 3, 0, 0] > 0


def test_schedule_invariants():
    p = small_driver()
    s = tabulate_covariances(p)
    T, D = p.horizon, p.n_d
    assert np.all(s.post_cov[:, 0] == 0)
    for M in (s.post_cov, s.pred_cov, s.mean_update_cov):
        assert np.max(np.abs(M - np.swapaxes(M, -1, -2))) <= 1e-12
        assert np.linalg.eigvalsh(M).min() >= -1e-12
    # prediction = posterior of the branch + spread of the mean
    for t in range(T):
        for d in range(D - 1):
            for u in (0, 1):
                nd = s.next_d[d, u]
                np.testing.assert_allclose(s.pred_cov[t, d] - s.mean_update_cov[t, d, u],
                                           s.post_cov[t + 1, nd], atol=1e-10)
    tr = np.trace(s.post_cov, axis1=2, axis2=3)
    for t in range(T + 1):
        assert np.all(np.diff(tr[t]) >= -1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_schedule_invariants_random(seed):
    p = random_problem(np.random.default_rng(seed), T=6, d_max=6)
    s = tabulate_covariances(p)
    for t in range(p.horizon):
        for d in range(p.n_d - 1):
            for u in (0, 1):
                np.testing.assert_allclose(s.pred_cov[t, d] - s.mean_update_cov[t, d, u],
                                           s.post_cov[t + 1, s.next_d[d, u]], atol=1e-10)


def test_filter_exact_observation_replaces_mean():
    p = small_driver()
    s = tabulate_covariances(p)
    x = np.array([0.3, -0.1, 0.02, 0.01])
    nxt = filter_step(p, s, 0, HybridState(np.zeros(4), 3, 1), np.array([0.5]), 1, x)
    assert nxt.d == 0
    np.testing.assert_array_equal(nxt.mu, x)
    assert nxt.x_s == 0


def test_filter_noise_free_prediction():
    p = replace(small_driver(), process_noise=np.zeros((4, 4)))
    s = tabulate_covariances(p)
    mu = np.array([0.2, 0.1, 0.01, -0.02])
    u = np.array([0.3])
    pred = p.dyn_A[2] @ mu + p.dyn_B[2] @ u + p.dyn_a[2]
    nxt = filter_step(p, s, 2, HybridState(mu, 0, 0), u, 1, pred[3:])
    np.testing.assert_allclose(nxt.mu, pred, atol=1e-15)
    assert (nxt.d, nxt.x_s) == (1, 1)


def test_filter_inattentive_copies_steering_angle():
    p = small_driver()
    s = tabulate_covariances(p)
    mu = np.array([0.2, 0.1, 0.01, -0.02])
    nxt = filter_step(p, s, 4, HybridState(mu, 2, 1), np.array([0.1]), 0, np.array([0.0375]))
    assert nxt.mu[3] == pytest.approx(0.0375, abs=1e-15)
    assert nxt.d == 3


def test_filter_rejects_bad_dimensions():
    p = small_driver()
    s = tabulate_covariances(p)
    with pytest.raises(ProblemError):
        filter_step(p, s, 0, HybridState(np.zeros(3), 0, 0), np.zeros(1), 0, np.zeros(4))
    with pytest.raises(ProblemError):
        # attended next step needs the full state
        filter_step(p, s, 0, HybridState(np.zeros(4), 0, 0), np.zeros(1), 0, np.zeros(1))


def test_filter_batched_matches_single():
    p = small_driver()
    s = tabulate_covariances(p)
    rng = np.random.default_rng(3)
    mu = rng.normal(size=(5, 4))
    d = np.array([0, 1, 2, 0, 4])
    u_o = np.array([0, 0, 1, 1, 0])
    u = rng.normal(size=(5, 1))
    obs = rng.normal(size=(5, 4))
    batch = filter_step(p, s, 3, HybridState(mu, d, np.zeros(5, int)), u, u_o, obs)
    for i in range(5):
        one = filter_step(p, s, 3, HybridState(mu[i], int(d[i]), 0), u[i], int(u_o[i]),
                          obs[i] if d_transition(d[i], u_o[i], p.d_max) == 0 else obs[i, :1])
        np.testing.assert_allclose(batch.mu[i], one.mu, atol=1e-14)
        assert batch.d[i] == one.d


@pytest.mark.parametrize("Theta1,mu,Sigma,expected", [
    (np.diag([-1.0, -2.0]), np.array([1.0, 1.0]), np.zeros((2, 2)), -3.0),
    (-np.eye(4), np.zeros(4), np.eye(4), -4.0),
    (np.diag([-0.5, -8, -11, 0]), np.array([1.0, 0, 0, 0]), np.diag([0.1, 0, 0, 0]), -0.55),
])
def test_expected_belief_reward(Theta1, mu, Sigma, expected):
    assert expected_belief_reward(Theta1, mu, Sigma) == pytest.approx(expected, abs=1e-14)
