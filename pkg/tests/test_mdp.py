from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import birth_death_mc, optimal_by_enumeration
from tokenrelay.mdp import (
    CoopState,
    EnvParams,
    NonThresholdPolicy,
    NoStationaryDistribution,
    Policy,
    StateSpace,
    ThresholdPolicy,
    action_set,
    bellman_backup,
    evaluate_policy_exact,
    expected_utility,
    greedy_policy,
    q_values,
    solve,
    steady_state_balance,
    to_threshold,
    transition_probs,
    value_iteration,
)

SMALL = StateSpace(max_tokens=4, energy_bins=3, p_max=1.0)


@st.composite
def envs(draw, beta_max=0.95):
    pi = draw(st.floats(0.0, 0.5))
    mu = draw(st.floats(0.0, 1.0 - pi))
    cost = draw(st.floats(0.0, 0.6))
    beta = draw(st.floats(0.0, beta_max))
    return EnvParams(pi=pi, mu=mu, cost=cost, benefit=0.5, beta=beta)


@st.composite
def spaces(draw):
    return StateSpace(max_tokens=draw(st.integers(1, 4)), energy_bins=draw(st.integers(2, 3)),
                      p_max=draw(st.sampled_from([0.1, 0.5, 2.0, math.inf])))


def test_env_validation():
    with pytest.raises(ValueError):
        EnvParams(pi=0.6, mu=0.1, cost=0.1)
    with pytest.raises(ValueError):
        EnvParams(pi=0.4, mu=0.7, cost=0.1)
    with pytest.raises(ValueError):
        EnvParams(pi=0.1, mu=0.1, cost=0.1, beta=1.0)
    with pytest.raises(ValueError):
        StateSpace(max_tokens=0)
    with pytest.raises(ValueError):
        StateSpace(energy_bins=1)


def test_action_set():
    assert action_set(5) == {0, 1}
    assert action_set(1) == {0, 1}
    assert action_set(0) == {0}


def test_transition_examples():
    space = StateSpace(max_tokens=20, energy_bins=11, p_max=10.0)
    env = EnvParams(pi=0.2, mu=0.3, cost=space.bin_width)
    got = transition_probs(CoopState(3, 5), 1, env, space)
    assert got == pytest.approx({(2, 5): 0.2, (4, 4): 0.3, (3, 5): 0.5})
    assert transition_probs(CoopState(0, 5), 0, env, space) == {(0, 5): 1.0}
    assert transition_probs(CoopState(3, 0), 0, env, space) == {(3, 0): 1.0}
    with pytest.raises(ValueError):
        transition_probs(CoopState(3, 0), 1, env, space)


def test_partial_bin_drop_splits_relay_mass():
    space = StateSpace(max_tokens=20, energy_bins=11, p_max=10.0)
    env = EnvParams(pi=0.2, mu=0.3, cost=0.25)
    got = transition_probs(CoopState(3, 5), 1, env, space)
    assert got[(4, 4)] == pytest.approx(0.3 * 0.25)
    assert got[(4, 5)] == pytest.approx(0.3 * 0.75)


def test_token_cap_clamps():
    space = StateSpace(max_tokens=4, energy_bins=3, p_max=math.inf)
    env = EnvParams(pi=0.1, mu=0.3, cost=0.1)
    got = transition_probs(CoopState(4, 2), 1, env, space)
    assert got == pytest.approx({(3, 2): 0.1, (4, 2): 0.9})


def test_expected_utility_examples():
    env = EnvParams(pi=0.2, mu=0.1, cost=0.1, benefit=0.5)
    assert expected_utility(CoopState(3, 5), 1, env) == pytest.approx(0.09)
    assert expected_utility(CoopState(0, 5), 1, env) == pytest.approx(-0.01)
    for k in range(5):
        assert expected_utility(CoopState(k, 0), 0, env) == 0.0


@settings(max_examples=200, deadline=None)
@given(envs(), spaces())
def test_rows_are_stochastic(env, space):
    for s in space.states():
        for a in action_set(s.e):
            row = transition_probs(s, a, env, space)
            assert abs(sum(row.values()) - 1.0) < 1e-12
            assert all(p >= 0 for p in row.values())
            # a partial-bin drop splits the relay mass over two energy bins
            q = float(space.drop_probability(env.cost))
            assert len(row) <= (3 if q in (0.0, 1.0) else 4)


@settings(max_examples=100, deadline=None)
@given(envs(), spaces())
def test_dead_state_absorbs(env, space):
    for k in range(space.max_tokens + 1):
        assert transition_probs(CoopState(k, 0), 0, env, space) == {(k, 0): 1.0}


@settings(max_examples=50, deadline=None)
@given(envs(beta_max=0.99), spaces())
def test_sweeps_contract_by_beta(env, space):
    V = np.zeros(space.shape)
    prev = None
    for _ in range(30):
        Vn = bellman_backup(V, env, space)
        diff = np.max(np.abs(Vn - V))
        if prev is not None:
            assert diff <= env.beta * prev + 1e-12
        prev, V = diff, Vn


def test_q_values_examples():
    space = StateSpace(max_tokens=4, energy_bins=3, p_max=1.0)
    env0 = EnvParams(pi=0.2, mu=0.3, cost=0.1, beta=0.0)
    V = ValueFunctionLike(np.random.default_rng(0).random(space.shape))
    for s in space.states():
        q = q_values(s, V, env0, space)
        for a, val in q.items():
            assert val == pytest.approx(expected_utility(s, a, env0))
    env = EnvParams(pi=0.2, mu=0.3, cost=0.1, beta=0.9)
    q = q_values(CoopState(2, 0), V, env, space)
    assert set(q) == {0}
    assert q[0] == pytest.approx(0.9 * V[(2, 0)])


class ValueFunctionLike:
    def __init__(self, values):
        self.values = values

    def __getitem__(self, s):
        return float(self.values[s[0], s[1]])


def test_small_instance_matches_enumeration():
    env = EnvParams(pi=0.2, mu=0.3, cost=0.1, benefit=0.5, beta=0.9)
    V = value_iteration(env, SMALL, tol=1e-10)
    v_star, q_star, p_star, _ = optimal_by_enumeration(env, SMALL)
    np.testing.assert_allclose(V.values, v_star, atol=1e-8)
    p = greedy_policy(V, env, SMALL)
    np.testing.assert_allclose(evaluate_policy_exact(p, env, SMALL).values, v_star, atol=1e-8)
    # argmax of the Q map at the converged values agrees with the oracle
    for s in SMALL.states():
        q = q_values(s, V, env, SMALL)
        gap = q_star[1][s] - q_star[0][s] if s.e > 0 else -1
        if abs(gap) > 1e-9:
            assert max(q, key=lambda a: (q[a], -a)) == int(gap > 0)
    th = to_threshold(p, SMALL)
    scanned = [max([k for k in range(5) if p_star[(k, e)]], default=-1) for e in range(3)]
    assert list(th.thresholds) == scanned


def test_optimal_dominates_every_enumerated_policy():
    env = EnvParams(pi=0.3, mu=0.25, cost=0.05, benefit=0.5, beta=0.95)
    space = StateSpace(max_tokens=3, energy_bins=3, p_max=0.2)
    p = greedy_policy(value_iteration(env, space, tol=1e-10), env, space)
    v = evaluate_policy_exact(p, env, space).values.reshape(-1)
    *_, all_vals = optimal_by_enumeration(env, space)
    assert np.all(v[None, :] >= all_vals - 1e-9)


def test_beta_zero_and_pi_zero_never_relay():
    space = StateSpace(max_tokens=6, energy_bins=4, p_max=1.0)
    for env in (EnvParams(pi=0.3, mu=0.3, cost=0.1, beta=0.0),
                EnvParams(pi=0.0, mu=0.3, cost=0.1, beta=0.99)):
        p = greedy_policy(value_iteration(env, space), env, space)
        assert not p.actions.any()
        assert solve(env, space).thresholds == (-1,) * 4


def test_ties_go_to_not_relaying():
    # zero cost and zero token value: relaying and idling are worth the same
    space = StateSpace(max_tokens=3, energy_bins=3, p_max=1.0)
    env = EnvParams(pi=0.0, mu=0.5, cost=0.0, beta=0.9)
    p = greedy_policy(value_iteration(env, space), env, space)
    assert not p.actions.any()


def test_beta_zero_evaluation_is_immediate_utility():
    space = StateSpace(max_tokens=3, energy_bins=3, p_max=1.0)
    env = EnvParams(pi=0.2, mu=0.3, cost=0.1, beta=0.0)
    p = ThresholdPolicy((-1, 2, 1)).to_policy(space)
    V = evaluate_policy_exact(p, env, space)
    for s in space.states():
        assert V[s] == pytest.approx(expected_utility(s, p[s], env))


def test_never_relay_value_closed_form():
    # idle forever: tokens drain one at a time at rate pi, each worth b
    space = StateSpace(max_tokens=8, energy_bins=3, p_max=1.0)
    env = EnvParams(pi=0.3, mu=0.2, cost=0.1, benefit=0.5, beta=0.9)
    V = evaluate_policy_exact(Policy(np.zeros(space.shape, dtype=np.int8)), env, space)
    pi, b, beta = env.pi, env.benefit, env.beta
    r = beta * pi / (1 - beta * (1 - pi))  # discounted chance of the next spend
    for k in range(space.max_tokens + 1):
        want = pi * b / (1 - beta * (1 - pi)) * sum(r ** j for j in range(k))
        assert V[(k, 2)] == pytest.approx(want, rel=1e-12, abs=1e-15)
        assert V[(k, 0)] == 0.0


def test_to_threshold_examples():
    space = StateSpace(max_tokens=20, energy_bins=11, p_max=125.0)
    assert to_threshold(Policy(np.zeros(space.shape, np.int8)), space).thresholds == (-1,) * 11
    acts = np.zeros(space.shape, np.int8)
    acts[:8, 10] = 1
    acts[:4, 2] = 1
    th = to_threshold(Policy(acts), space)
    assert th.thresholds[10] == 7 and th.thresholds[2] == 3
    assert th.to_policy(space) == Policy(acts)
    acts[5, 2] = 1
    with pytest.raises(NonThresholdPolicy) as exc:
        to_threshold(Policy(acts), space)
    assert exc.value.energy_bin == 2


def test_solved_thresholds_are_monotone_in_energy():
    space = StateSpace()
    for cost in (0.025, 0.1, 0.225):
        tp = solve(EnvParams(pi=0.05, mu=0.05, cost=cost), space)
        assert tp.is_monotone()
        assert tp.thresholds[0] == -1


def test_balance_never_cooperate():
    space = StateSpace(max_tokens=10, energy_bins=3, p_max=math.inf)
    env = EnvParams(pi=0.2, mu=0.3, cost=0.1)
    assert steady_state_balance(ThresholdPolicy((-1, -1, -1)), env, space) == (0.0, 0.0)
    stuck = EnvParams(pi=0.0, mu=0.3, cost=0.1)
    with pytest.raises(NoStationaryDistribution):
        steady_state_balance(ThresholdPolicy((-1, -1, -1)), stuck, space)


def test_balance_threshold_policy_matches_monte_carlo():
    space = StateSpace(max_tokens=20, energy_bins=11, p_max=math.inf)
    env = EnvParams(pi=0.2, mu=0.3, cost=0.1)
    tp = ThresholdPolicy((-1,) + (5,) * 10)
    use, provide = steady_state_balance(tp, env, space)
    assert use == pytest.approx(provide, abs=1e-12)
    mc_use, mc_provide = birth_death_mc(0.2, 0.3, 5, 20, 10**6, np.random.default_rng(1))
    assert abs(mc_use - use) < 2e-3
    assert abs(mc_provide - provide) < 2e-3


def test_balance_dead_bin_is_zero():
    space = StateSpace(max_tokens=5, energy_bins=3, p_max=1.0)
    env = EnvParams(pi=0.2, mu=0.3, cost=0.1)
    with pytest.raises(NoStationaryDistribution):
        steady_state_balance(ThresholdPolicy((-1, 2, 3)), env, space, energy_bin=0)
