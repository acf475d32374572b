from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from attention_ioc.belief import HybridState, tabulate_covariances
from attention_ioc.model import DRIVER_THETA, SecondaryMdp
from attention_ioc.simulator import simulate_batch
from attention_ioc.soft_solver import (
    InfeasibleParameterError,
    marginalize_control,
    policy_log_prob,
    sample_controls,
    solve_soft_policy,
)

from helpers import random_problem, random_theta, scalar_problem, small_driver
from oracles import (
    ENUM_THETA,
    QUAD,
    enumerate_discrete_value,
    enumeration_problem,
    quadrature_problem,
    quadrature_values,
)


def test_marginalize_decoupled():
    m = marginalize_control(np.diag([-1.0, -1.0]), np.zeros(2), 1, 1)
    np.testing.assert_allclose(m.F, 0.0)
    np.testing.assert_allclose(m.f, 0.0)
    np.testing.assert_allclose(m.SigmaF, [[0.5]])
    np.testing.assert_allclose(m.Psi, [[-1.0]])
    np.testing.assert_allclose(m.psi, 0.0)
    # log of int exp(-u^2) du = log sqrt(pi)
    assert m.c == pytest.approx(0.5 * np.log(np.pi), abs=1e-15)


def test_marginalize_without_cross_terms():
    rng = np.random.default_rng(1)
    O = np.zeros((5, 5))
    O[:3, :3] = -np.eye(3) + 0.1 * np.ones((3, 3))
    O[3:, 3:] = -np.array([[2.0, 0.3], [0.3, 1.0]])
    m = marginalize_control(O, rng.normal(size=5), 3, 2)
    np.testing.assert_array_equal(m.F, 0.0)
    np.testing.assert_array_equal(m.Psi, O[:3, :3])


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 1), st.floats(-1.5, 1.5), st.floats(0.2, 3), st.floats(-1, 1), st.floats(-1, 1))
def test_marginalize_matches_quadrature(o_mm, o_mu, p, w_m, w_u):
    O = np.array([[o_mm, o_mu], [o_mu, -p]])
    w = np.array([w_m, w_u])
    m = marginalize_control(O, w, 1, 1)
    u = np.linspace(-60, 60, 120001)
    for mu in (-2.0, -0.5, 0.0, 0.7, 1.9):
        vals = o_mm * mu**2 + 2 * o_mu * mu * u - p * u**2 + w_m * mu + w_u * u
        ref = logsumexp(vals) + np.log(u[1] - u[0])
        got = m.Psi[0, 0] * mu**2 + m.psi[0] * mu + m.c
        assert got == pytest.approx(ref, abs=1e-6)


def test_marginalize_rejects_indefinite_control_block():
    with pytest.raises(InfeasibleParameterError):
        marginalize_control(np.diag([-1.0, 0.5]), np.zeros(2), 1, 1)


def test_terminal_policy_example():
    q = 0.7
    p = scalar_problem(T=1, q=0.0)
    policy = solve_soft_policy(p, tabulate_covariances(p), [-q, -0.5, 0.0, -1.0])
    np.testing.assert_allclose(policy.SigmaF[-1], [[1.0]])
    np.testing.assert_allclose(policy.F[-1], [[0.0]])
    np.testing.assert_allclose(policy.f[-1], [0.0])


def test_uniform_discrete_policy_without_noise_or_discrete_reward():
    p = replace(small_driver(), process_noise=np.zeros((4, 4)))
    theta = DRIVER_THETA.copy()
    theta[4:] = 0.0
    policy = solve_soft_policy(p, tabulate_covariances(p), theta)
    probs = np.exp(policy.tau - policy.nu[..., None, None])
    np.testing.assert_allclose(probs[..., 1, 0], 0.5, atol=1e-12)


@pytest.fixture(scope="module")
def driver_policy():
    p = small_driver()
    s = tabulate_covariances(p)
    return p, s, solve_soft_policy(p, s, DRIVER_THETA)


def test_driver_policy_shape(driver_policy):
    p, s, policy = driver_policy
    for S in policy.SigmaF:
        assert np.linalg.eigvalsh(S).min() > 0
    glance = policy.discrete_probs(0)[0, 0, 1, 0]
    assert 0 < glance < 1
    sums = np.exp(logsumexp(policy.tau - policy.nu[..., None, None], axis=(-2, -1)))
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)


def test_infeasible_theta_reports_step():
    p = small_driver()
    theta = DRIVER_THETA.copy()
    theta[3] = 1.0
    with pytest.raises(InfeasibleParameterError) as info:
        solve_soft_policy(p, tabulate_covariances(p), theta)
    assert info.value.t == p.horizon


def test_log_prob_normalization(driver_policy):
    p, s, policy = driver_policy
    st_ = HybridState(np.array([0.1, 0.05, 0.003, 0.001]), 2, 1)
    mean, cov, _ = policy.control_distribution(3, st_.mu, st_.d, st_.x_s)
    total = sum(np.exp(policy_log_prob(policy, 3, st_, mean, o, 0)) for o in (0, 1))
    gauss_peak = -0.5 * np.linalg.slogdet(2 * np.pi * cov)[1]
    assert np.log(total) == pytest.approx(gauss_peak, abs=1e-10)


def test_log_prob_uniform_discrete():
    p = scalar_problem(T=2, q=0.0)
    policy = solve_soft_policy(p, tabulate_covariances(p), [-1.0, -0.5, 0.0, 0.0])
    st_ = HybridState(np.array([0.3]), 0, 0)
    mean, cov, _ = policy.control_distribution(0, st_.mu, 0, 0)
    lp = policy_log_prob(policy, 0, st_, mean, 1, 0)
    assert lp == pytest.approx(-0.5 * np.log(2 * np.pi * cov[0, 0]) + np.log(0.5), abs=1e-12)


def test_sample_controls(driver_policy):
    p, s, policy = driver_policy
    st_ = HybridState(np.array([0.2, 0.1, 0.005, 0.002]), 0, 0)
    a = sample_controls(policy, 4, st_, np.random.default_rng(7))
    b = sample_controls(policy, 4, st_, np.random.default_rng(7))
    assert a[0] == pytest.approx(b[0]) and a[1:] == b[1:]
    rng = np.random.default_rng(8)
    draws = np.array([sample_controls(policy, 4, st_, rng)[0] for _ in range(20000)])
    mean, cov, _ = policy.control_distribution(4, st_.mu, 0, 0)
    se = np.sqrt(cov[0, 0] / len(draws))
    assert abs(draws.mean() - mean[0]) < 4 * se


def test_sampling_concentrates_as_covariance_shrinks():
    p = scalar_problem(T=2, q=0.0)
    policy = solve_soft_policy(p, tabulate_covariances(p), [-1.0, -1e8, 0.0, -1.0])
    st_ = HybridState(np.array([0.4]), 0, 0)
    mean, _, _ = policy.control_distribution(1, st_.mu, 0, 0)
    u = sample_controls(policy, 1, st_, np.random.default_rng(0))[0]
    assert abs(u[0] - mean[0]) < 1e-3


def test_continuous_part_ignores_discrete_settings():
    base = small_driver()
    s = tabulate_covariances(base)
    ref = solve_soft_policy(base, s, DRIVER_THETA)
    theta = DRIVER_THETA.copy()
    theta[4:] = [1.3, -0.2]
    other = replace(base, d_max=4)
    for prob, th in ((base, theta), (other, DRIVER_THETA)):
        pol = solve_soft_policy(prob, tabulate_covariances(prob), th)
        for name in ("F", "f", "SigmaF"):
            np.testing.assert_allclose(getattr(pol, name), getattr(ref, name), atol=1e-12, rtol=0)


def test_noise_free_discrete_part_is_plain_soft_iteration():
    rng = np.random.default_rng(4)
    p = random_problem(rng, T=5, d_max=5)
    P = p.sub_mdp.transition.copy()
    P[0] = P[1]  # secondary dynamics blind to attention, so only covariances could couple d
    p = replace(p, process_noise=np.zeros((3, 3)), obs_noise=np.zeros((1, 1)),
                sub_mdp=SecondaryMdp(P, p.sub_mdp.features))
    theta = random_theta(rng, p)
    pol = solve_soft_policy(p, tabulate_covariances(p), theta)
    # tau and nu do not depend on d
    np.testing.assert_allclose(pol.nu - pol.nu[:, :1], 0.0, atol=1e-10)


def test_quadrature_oracle():
    p = quadrature_problem()
    pol = solve_soft_policy(p, tabulate_covariances(p), QUAD["theta"])
    mus = np.array([-1.0, -0.4, 0.0, 0.5, 1.2])
    ref = quadrature_values(mus)
    got = pol.value(0, mus[:, None], 0, 0)
    np.testing.assert_allclose(got, ref, atol=1e-3)


@pytest.mark.parametrize("d0,x0", [(0, 0), (0, 1), (3, 1)])
def test_path_enumeration_oracle(d0, x0):
    p = enumeration_problem()
    pol = solve_soft_policy(p, tabulate_covariances(p), ENUM_THETA)
    assert abs(pol.c).max() < 1e-14
    ref = enumerate_discrete_value(p, ENUM_THETA, d0, x0)
    assert pol.nu[0, d0, x0] == pytest.approx(ref, abs=1e-9)


def test_entropy_consistency(driver_policy):
    """Soft value = expected reward + expected entropy of the policy (Monte Carlo)."""
    p, s, policy = driver_policy
    data = simulate_batch(p, s, policy, 4000, 21)
    neg_logp = np.zeros(len(data))
    for k in range(data.steps):
        st_ = HybridState(data.mu[:, k], data.d[:, k], data.x_s[:, k])
        neg_logp -= policy_log_prob(policy, k, st_, data.u_p[:, k], data.u_o[:, k], data.u_s[:, k])
    total = neg_logp + data.rewards(DRIVER_THETA)
    init = p.init_state
    v0 = policy.value(0, init.x_p, init.d, init.x_s)
    se = total.std(ddof=1) / np.sqrt(len(total))
    assert abs(total.mean() - v0) < 3 * se


def test_to_json_dump(driver_policy):
    import json
    _, _, policy = driver_policy
    dump = json.loads(policy.to_json())
    assert len(dump["steps"]) == policy.horizon + 1
    assert dump["theta"] == list(DRIVER_THETA)
