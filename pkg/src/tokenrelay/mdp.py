"""Per-device cooperation MDP: states, transitions, utilities and solvers.

State ``(k, e)`` is the token holding and the quantised relay-energy bin; bin
0 is the dead state.  Value arrays are indexed ``values[k, e]``.

Two independent routes compute values:

* ``value_iteration`` / ``greedy_policy`` use a vectorised stencil backup that
  also runs over a batch of parameter triples (used by the policy table);
* ``evaluate_policy_exact`` builds the dense transition matrix from
  ``transition_probs`` and solves the linear system directly.  It is the
  oracle the tests compare against.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

SOLVER_VERSION = 1


class NonThresholdPolicy(ValueError):
    """A policy cooperates at some k while refusing at a smaller k in the same bin."""

    def __init__(self, message, energy_bin=None, params=None):
        super().__init__(message)
        self.energy_bin = energy_bin
        self.params = params


class NoStationaryDistribution(ValueError):
    pass


@dataclass(frozen=True)
class EnvParams:
    """Environment seen by one UE: outbound success rate, inbound demand, cost, benefit, discount."""

    pi: float
    mu: float
    cost: float
    benefit: float = 0.5
    beta: float = 0.99

    def __post_init__(self):
        if not 0.0 <= self.pi <= 0.5:
            raise ValueError(f"pi must lie in [0, 0.5], got {self.pi}")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must lie in [0, 1], got {self.mu}")
        if self.pi + self.mu > 1.0 + 1e-12:
            raise ValueError("pi + mu must not exceed 1")
        if self.cost < 0:
            raise ValueError("cost must be non-negative")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")


@dataclass(frozen=True)
class StateSpace:
    """Token states 0..max_tokens and energy bins 0..energy_bins-1.

    ``p_max`` may be ``inf`` to model an unlimited relay budget; then a relay
    transition never leaves its bin.
    """

    max_tokens: int = 20
    energy_bins: int = 11
    p_max: float = 125.0

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be at least 1")
        if self.energy_bins < 2:
            raise ValueError("energy_bins must be at least 2")
        if not self.p_max > 0:
            raise ValueError("p_max must be positive")

    @property
    def bin_width(self) -> float:
        return self.p_max / (self.energy_bins - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.max_tokens + 1, self.energy_bins)

    @property
    def n_states(self) -> int:
        return (self.max_tokens + 1) * self.energy_bins

    def drop_probability(self, cost):
        """Chance a relay transition drops one energy bin (expected drain = cost)."""
        if math.isinf(self.p_max):
            return np.zeros_like(np.asarray(cost, dtype=float))
        return np.minimum(1.0, np.asarray(cost, dtype=float) / self.bin_width)

    def states(self):
        for k in range(self.max_tokens + 1):
            for e in range(self.energy_bins):
                yield CoopState(k, e)

    def index(self, s: CoopState) -> int:
        return s.k * self.energy_bins + s.e


class CoopState(NamedTuple):
    k: int
    e: int


@dataclass(frozen=True)
class ValueFunction:
    values: np.ndarray
    sweeps: int = 0
    residual: float = 0.0

    def __getitem__(self, s):
        k, e = s
        return float(self.values[k, e])


@dataclass(frozen=True)
class Policy:
    actions: np.ndarray

    def __getitem__(self, s):
        k, e = s
        return int(self.actions[k, e])

    def __eq__(self, other):
        return isinstance(other, Policy) and np.array_equal(self.actions, other.actions)

    __hash__ = None


@dataclass(frozen=True)
class ThresholdPolicy:
    """Cooperate in bin e iff k <= thresholds[e]; -1 means never."""

    thresholds: tuple[int, ...] = field(default_factory=tuple)

    def action(self, k: int, e: int) -> int:
        return int(e > 0 and k <= self.thresholds[e])

    def to_policy(self, space: StateSpace) -> Policy:
        k = np.arange(space.max_tokens + 1)[:, None]
        th = np.asarray(self.thresholds)[None, :]
        acts = (k <= th).astype(np.int8)
        acts[:, 0] = 0
        return Policy(acts)

    def is_monotone(self) -> bool:
        return all(a <= b for a, b in zip(self.thresholds, self.thresholds[1:]))


def action_set(e: int) -> frozenset[int]:
    return frozenset({0, 1}) if e > 0 else frozenset({0})


def transition_probs(s: CoopState, a: int, env: EnvParams, space: StateSpace) -> dict[CoopState, float]:
    k, e = s
    if a not in action_set(e):
        raise ValueError(f"action {a} not available in energy bin {e}")
    get = env.pi if (k > 0 and e > 0) else 0.0
    give = env.mu * a if e > 0 else 0.0
    q = float(space.drop_probability(env.cost))
    k_up = min(k + 1, space.max_tokens)
    out: dict[CoopState, float] = defaultdict(float)
    if get > 0:
        out[CoopState(k - 1, e)] += get
    if give > 0:
        if q > 0:
            out[CoopState(k_up, e - 1)] += give * q
        if q < 1:
            out[CoopState(k_up, e)] += give * (1.0 - q)
    stay = 1.0 - get - give
    if stay > 0:
        out[CoopState(k, e)] += stay
    return dict(out)


def expected_utility(s: CoopState, a: int, env: EnvParams) -> float:
    k, e = s
    gain = env.pi * env.benefit if (k > 0 and e > 0) else 0.0
    spend = env.mu * a * env.cost if e > 0 else 0.0
    return gain - spend


def q_values(s: CoopState, V: ValueFunction, env: EnvParams, space: StateSpace) -> dict[int, float]:
    out = {}
    for a in sorted(action_set(s.e)):
        cont = sum(p * V[s2] for s2, p in transition_probs(s, a, env, space).items())
        out[a] = expected_utility(s, a, env) + env.beta * cont
    return out


# --- vectorised stencil backup -------------------------------------------------


def _column(x, n):
    return np.broadcast_to(np.asarray(x, dtype=float), (n,)).reshape(n, 1, 1)


def _backup(V, pi, mu, cost, drop, benefit, beta):
    """Return (Q0, D) where D = Q1 - Q0 (``-inf`` in the dead bin).

    V has shape (n, K+1, B); the scalar parameters have shape (n, 1, 1).
    Computing the action advantage directly keeps exact ties exact.
    """
    _, kk, bb = V.shape
    has_token = (np.arange(kk) > 0)[:, None]
    alive = (np.arange(bb) > 0)[None, :]
    v_down = np.concatenate([V[:, :1, :], V[:, :-1, :]], axis=1)
    v_up = np.concatenate([V[:, 1:, :], V[:, -1:, :]], axis=1)
    v_up_drop = np.concatenate([v_up[:, :, :1], v_up[:, :, :-1]], axis=2)

    p_get = pi * (has_token & alive)
    q0 = p_get * benefit + beta * (p_get * v_down + (1.0 - p_get) * V)
    adv = mu * (-cost + beta * (drop * v_up_drop + (1.0 - drop) * v_up - V))
    adv = np.where(alive, adv, -np.inf)
    return q0, adv


def solve_batch(pi, mu, cost, benefit, beta, space: StateSpace, tol: float = 1e-6,
                max_sweeps: int = 10_000_000):
    """Value iteration over a batch of environments.

    Each entry stops independently once its sweep difference falls below
    ``tol * (1 - beta) / (2 * beta)``; frozen entries are no longer touched,
    so a batch of one reproduces a single solve bit for bit.

    Returns ``(values, actions, sweeps, residual)`` with values/actions of
    shape (n, K+1, B).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    pi = np.atleast_1d(np.asarray(pi, dtype=float))
    n = pi.size
    pi = pi.reshape(n, 1, 1)
    mu = _column(mu, n)
    cost = _column(cost, n)
    benefit = _column(benefit, n)
    beta = _column(beta, n)
    drop = np.asarray(space.drop_probability(cost), dtype=float).reshape(n, 1, 1)
    with np.errstate(divide="ignore"):
        stop = np.where(beta[:, 0, 0] > 0, tol * (1.0 - beta[:, 0, 0]) / (2.0 * beta[:, 0, 0]), np.inf)

    V = np.zeros((n,) + space.shape)
    sweeps = np.zeros(n, dtype=np.int64)
    residual = np.full(n, np.inf)
    active = np.arange(n)
    while active.size:
        if int(sweeps[active[0]]) >= max_sweeps:
            raise RuntimeError("value iteration did not converge")
        full = active.size == n
        sl = slice(None) if full else active
        Vs = V[sl]
        q0, adv = _backup(Vs, pi[sl], mu[sl], cost[sl], drop[sl], benefit[sl], beta[sl])
        Vn = q0 + np.maximum(adv, 0.0)
        res = np.max(np.abs(Vn - Vs), axis=(1, 2))
        V[sl] = Vn
        sweeps[sl] += 1
        residual[sl] = res
        active = active[res >= stop[active]]

    _, adv = _backup(V, pi, mu, cost, drop, benefit, beta)
    actions = (adv > 0).astype(np.int8)
    return V, actions, sweeps, residual


def _env_arrays(env: EnvParams):
    return env.pi, env.mu, env.cost, env.benefit, env.beta


def bellman_backup(V: np.ndarray, env: EnvParams, space: StateSpace) -> np.ndarray:
    """One value-iteration sweep applied to ``V`` (shape (K+1, B))."""
    pi, mu, cost, b, beta = (_column(x, 1) for x in _env_arrays(env))
    drop = np.asarray(space.drop_probability(cost)).reshape(1, 1, 1)
    q0, adv = _backup(np.asarray(V, dtype=float)[None], pi, mu, cost, drop, b, beta)
    return (q0 + np.maximum(adv, 0.0))[0]


def value_iteration(env: EnvParams, space: StateSpace, tol: float = 1e-6) -> ValueFunction:
    V, _, sweeps, residual = solve_batch(*_env_arrays(env), space=space, tol=tol)
    return ValueFunction(V[0], int(sweeps[0]), float(residual[0]))


def greedy_policy(V: ValueFunction, env: EnvParams, space: StateSpace) -> Policy:
    """Maximising action per state; an exact tie goes to not relaying."""
    pi, mu, cost, b, beta = (_column(x, 1) for x in _env_arrays(env))
    drop = np.asarray(space.drop_probability(cost)).reshape(1, 1, 1)
    _, adv = _backup(V.values[None], pi, mu, cost, drop, b, beta)
    return Policy((adv[0] > 0).astype(np.int8))


def thresholds_of(actions: np.ndarray):
    """Thresholds per bin for action arrays of shape (..., K+1, B).

    Returns ``(thresholds, ok)`` where ``ok`` is False for entries that are not
    of threshold form in some bin.
    """
    acts = np.asarray(actions).astype(bool)
    ones = acts.sum(axis=-2)
    kk = acts.shape[-2]
    prefix = np.arange(kk)[:, None] < ones[..., None, :]
    ok = np.all(prefix == acts, axis=(-2, -1))
    return (ones - 1).astype(np.int64), ok


def to_threshold(p: Policy, space: StateSpace) -> ThresholdPolicy:
    acts = np.asarray(p.actions)
    if acts.shape != space.shape:
        raise ValueError(f"policy shape {acts.shape} does not match state space {space.shape}")
    th, ok = thresholds_of(acts)
    if not ok:
        bad = [e for e in range(space.energy_bins)
               if not np.array_equal(acts[:, e].astype(bool),
                                     np.arange(space.max_tokens + 1) <= th[e])]
        raise NonThresholdPolicy(f"policy is not threshold in k for energy bin(s) {bad}",
                                 energy_bin=bad[0])
    return ThresholdPolicy(tuple(int(x) for x in th))


def solve(env: EnvParams, space: StateSpace, tol: float = 1e-6) -> ThresholdPolicy:
    """Optimal threshold policy for one environment."""
    V = value_iteration(env, space, tol)
    try:
        return to_threshold(greedy_policy(V, env, space), space)
    except NonThresholdPolicy as exc:
        exc.params = env
        raise


# --- exact evaluation (oracle route) --------------------------------------------


def transition_matrices(env: EnvParams, space: StateSpace):
    """Dense per-action transition matrices and utilities.

    Returns ``(P, U, feasible)`` with P of shape (2, S, S), U of shape (2, S)
    and a boolean mask of states where action 1 is allowed.  Rows for an
    infeasible action copy action 0.
    """
    S = space.n_states
    P = np.zeros((2, S, S))
    U = np.zeros((2, S))
    feasible = np.zeros(S, dtype=bool)
    for s in space.states():
        i = space.index(s)
        feasible[i] = 1 in action_set(s.e)
        for a in (0, 1):
            aa = a if a in action_set(s.e) else 0
            for s2, p in transition_probs(s, aa, env, space).items():
                P[a, i, space.index(s2)] += p
            U[a, i] = expected_utility(s, aa, env)
    return P, U, feasible


def evaluate_policy_exact(p: Policy, env: EnvParams, space: StateSpace) -> ValueFunction:
    P, U, feasible = transition_matrices(env, space)
    a = np.asarray(p.actions).reshape(-1).astype(int)
    if np.any(a[~feasible] != 0):
        raise ValueError("policy relays in the dead state")
    idx = np.arange(space.n_states)
    Pp = P[a, idx, :]
    Up = U[a, idx]
    v = np.linalg.solve(np.eye(space.n_states) - env.beta * Pp, Up)
    return ValueFunction(v.reshape(space.shape))


# --- steady-state token balance ------------------------------------------------


def _birth_death(tp: ThresholdPolicy, env: EnvParams, space: StateSpace, energy_bin: int):
    K = space.max_tokens
    k = np.arange(K + 1)
    coop = (k <= tp.thresholds[energy_bin]).astype(float) if energy_bin > 0 else np.zeros(K + 1)
    down = np.where(k > 0, env.pi if energy_bin > 0 else 0.0, 0.0)
    up = env.mu * coop
    P = np.zeros((K + 1, K + 1))
    P[k[1:], k[1:] - 1] = down[1:]
    P[k[:-1], k[:-1] + 1] += up[:-1]
    P[k, k] += 1.0 - down - up
    P[K, K] += up[K]
    return P, coop, down


def _closed_classes(P) -> list[np.ndarray]:
    from scipy.sparse.csgraph import connected_components

    adj = P > 0
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    closed = []
    for c in range(n_comp):
        members = labels == c
        if not np.any(adj[members][:, ~members]):
            closed.append(np.flatnonzero(members))
    return closed


def steady_state_balance(tp: ThresholdPolicy, env: EnvParams, space: StateSpace,
                         energy_bin: int | None = None) -> tuple[float, float]:
    """Long-run token spend and earn rates with the budget held in one bin.

    Models the unlimited-budget idealisation: the energy bin never drains, so
    token holdings follow a birth-death chain with down-rate ``pi`` (k > 0)
    and up-rate ``mu * sigma(k)``.  Returns ``(use_rate, provide_rate)``.
    """
    e = space.energy_bins - 1 if energy_bin is None else energy_bin
    P, coop, down = _birth_death(tp, env, space, e)
    closed = _closed_classes(P)
    if len(closed) != 1:
        raise NoStationaryDistribution("token chain has more than one closed class")
    # the closed class is an interval on which detailed balance gives the weights
    members = closed[0]
    up = env.mu * coop
    dist = np.zeros(P.shape[0])
    w = 1.0
    for k in members:
        if k > members[0]:
            w *= up[k - 1] / down[k]
        dist[k] = w
    dist /= dist.sum()
    use = float(dist @ down)
    provide = env.mu * float(dist @ coop)
    return use, provide
