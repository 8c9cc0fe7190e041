from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokenrelay.agent import (
    AgentState,
    Event,
    InvalidEvent,
    Mode,
    SlotObservation,
    apply_token_event,
    decide,
    ema,
    quantize_energy,
    update_estimates,
)
from tokenrelay.mdp import StateSpace
from tokenrelay.policy_table import ParamGrid, PolicyTable


def make_table(k_th=5):
    grid = ParamGrid(pi_grid=(0.1,), mu_grid=(0.1,), cost_grid=(0.1,), beta=0.99, benefit=0.5,
                     space=StateSpace(20, 11, 10.0))
    th = np.full((1, 1, 1, 11), k_th, dtype=np.int64)
    th[..., 0] = -1
    return PolicyTable(grid, th, np.zeros((1, 1, 1), np.uint8))


def test_ema_examples():
    a = AgentState(tokens=3, energy=5.0, p_max=10.0, pi_hat=0.1, window=50)
    b = update_estimates(a, SlotObservation(outbound_success=True))
    assert b.pi_hat == pytest.approx(0.118)
    assert b.mu_hat == pytest.approx(0.1 * 49 / 50)
    z = AgentState(tokens=3, energy=5.0, p_max=10.0, pi_hat=0.0, mu_hat=0.0)
    assert update_estimates(z, SlotObservation()).pi_hat == 0.0


def test_ema_tracks_bernoulli_rate():
    # one final sample has sd sqrt(p(1-p)/(2w-1)) ~ 0.046, so check the
    # stationary law across many streams plus the long-run average of one
    rng = np.random.default_rng(3)
    p, w = 0.3, 50
    est = np.full(4000, 0.1)
    for _ in range(2000):
        est = ema(est, (rng.random(est.size) < p).astype(float), w)
    assert abs(est.mean() - p) < 0.005
    assert np.std(est) == pytest.approx(np.sqrt(p * (1 - p) / (2 * w - 1)), rel=0.1)
    assert np.mean(np.abs(est - p) < 0.05) > 0.7

    one, acc = 0.1, 0.0
    for x in rng.random(100_000) < p:
        one = ema(one, float(x), w)
        acc += one
    assert abs(acc / 100_000 - p) < 0.01


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.lists(st.booleans(), max_size=60), st.integers(1, 100))
def test_estimates_stay_in_unit_interval(start, stream, w):
    est = start
    for x in stream:
        est = ema(est, float(x), w)
        assert -1e-15 <= est <= 1 + 1e-15


def test_quantize_energy_examples():
    assert quantize_energy(10.0, 10.0, 11) == 10
    assert quantize_energy(0.0, 10.0, 11) == 0
    assert quantize_energy(5.5, 10.0, 11) == 6
    assert quantize_energy(1e-9, 10.0, 11) == 1


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1))
def test_quantize_energy_range(frac):
    b = quantize_energy(frac * 10.0, 10.0, 11)
    assert (b == 0) == (frac * 10.0 <= 0)
    assert 0 <= b <= 10


def test_decide_examples():
    t = make_table(5)
    base = dict(tokens=3, energy=10.0, p_max=10.0)
    assert decide(AgentState(**base), 0.1, t) == 1
    assert decide(AgentState(**{**base, "tokens": 6}), 0.1, t) == 0
    assert decide(AgentState(**{**base, "energy": 0.0}), 0.1, t) == 0
    for k, p in ((0, 0.0), (20, 10.0), (6, 3.0)):
        assert decide(AgentState(tokens=k, energy=p, p_max=10.0, mode=Mode.OBEDIENT_INFINITE),
                      0.1, None) == 1
        assert decide(AgentState(tokens=k, energy=p, p_max=10.0, mode=Mode.NEVER_COOPERATE),
                      0.1, None) == 0
        assert decide(AgentState(tokens=k, energy=p, p_max=10.0, mode=Mode.OBEDIENT_FINITE),
                      0.1, None) == int(p > 0)


def test_token_events_examples():
    a = AgentState(tokens=4, energy=10.0, p_max=10.0)
    b = apply_token_event(a, Event.PROVIDED, 0.1)
    assert (b.tokens, b.energy) == (5, pytest.approx(9.9))
    c = apply_token_event(a, Event.RECEIVED)
    assert (c.tokens, c.energy) == (3, 10.0)
    full = AgentState(tokens=20, energy=10.0, p_max=10.0)
    d = apply_token_event(full, "provided", 0.1)
    assert (d.tokens, d.energy) == (20, pytest.approx(9.9))
    low = AgentState(tokens=1, energy=0.05, p_max=10.0)
    assert apply_token_event(low, Event.PROVIDED, 0.1).energy == 0.0


def test_invalid_events():
    with pytest.raises(InvalidEvent):
        apply_token_event(AgentState(tokens=0, energy=5.0, p_max=10.0), Event.RECEIVED)
    with pytest.raises(InvalidEvent):
        apply_token_event(AgentState(tokens=3, energy=0.0, p_max=10.0), Event.PROVIDED, 0.1)
    with pytest.raises(InvalidEvent):
        apply_token_event(AgentState(tokens=3, energy=0.0, p_max=10.0), Event.RECEIVED)


def test_obedient_infinite_keeps_energy():
    a = AgentState(tokens=2, energy=1.0, p_max=10.0, mode=Mode.OBEDIENT_INFINITE)
    assert apply_token_event(a, Event.PROVIDED, 0.5).energy == 1.0


def test_state_validation():
    with pytest.raises(ValueError):
        AgentState(tokens=21, energy=1.0, p_max=10.0)
    with pytest.raises(ValueError):
        AgentState(tokens=1, energy=11.0, p_max=10.0)
    with pytest.raises(ValueError):
        SlotObservation(inbound_request=True, inbound_cost=0.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 20), st.lists(st.tuples(st.booleans(), st.floats(0.01, 2.0)), max_size=80))
def test_event_sequences_respect_bounds(k0, events):
    """Random valid event streams keep 0 <= k <= cap, p non-increasing, and
    received <= provided + k0."""
    a = AgentState(tokens=k0, energy=10.0, p_max=10.0)
    provided = received = 0
    t = make_table(20)
    for give, cost in events:
        if a.energy <= 0:
            assert decide(a, cost, t) == 0
            break
        before = a.energy
        if give:
            a = apply_token_event(a, Event.PROVIDED, cost)
            provided += 1
        elif a.tokens > 0:
            a = apply_token_event(a, Event.RECEIVED)
            received += 1
        assert 0 <= a.tokens <= 20
        assert a.energy <= before
        assert received <= provided + k0
