"""Online learner run by each UE: moving-average estimates and table-driven decisions."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

from .policy_table import PolicyTable, lookup


class Mode(str, Enum):
    TOKEN_LEARNING = "token-learning"
    OBEDIENT_FINITE = "obedient-finite"
    OBEDIENT_INFINITE = "obedient-infinite"
    NEVER_COOPERATE = "never-cooperate"

    @property
    def uses_tokens(self) -> bool:
        return self in (Mode.TOKEN_LEARNING, Mode.NEVER_COOPERATE)


class Event(str, Enum):
    PROVIDED = "provided"
    RECEIVED = "received"


class InvalidEvent(RuntimeError):
    pass


# Initial estimates are not pinned down elsewhere; start near the network-average ORDR.
DEFAULT_PI_HAT0 = 0.1
DEFAULT_MU_HAT0 = 0.1


@dataclass(frozen=True)
class AgentState:
    tokens: int
    energy: float
    p_max: float
    max_tokens: int = 20
    energy_bins: int = 11
    pi_hat: float = DEFAULT_PI_HAT0
    mu_hat: float = DEFAULT_MU_HAT0
    window: int = 50
    mode: Mode = Mode.TOKEN_LEARNING

    def __post_init__(self):
        if not 0 <= self.tokens <= self.max_tokens:
            raise ValueError("tokens out of range")
        if not 0.0 <= self.energy <= self.p_max:
            raise ValueError("energy out of range")
        if self.window < 1:
            raise ValueError("window must be at least 1")

    @property
    def energy_bin(self) -> int:
        return quantize_energy(self.energy, self.p_max, self.energy_bins)


@dataclass(frozen=True)
class SlotObservation:
    outbound_success: bool = False
    inbound_request: bool = False
    inbound_cost: float | None = None

    def __post_init__(self):
        if self.inbound_request and self.inbound_cost is not None and self.inbound_cost <= 0:
            raise ValueError("inbound_cost must be positive")


def ema(estimate, indicator, window):
    """One step of the moving average; works elementwise on arrays."""
    return indicator / window + (window - 1) / window * estimate


def update_estimates(a: AgentState, obs: SlotObservation) -> AgentState:
    return replace(
        a,
        pi_hat=ema(a.pi_hat, float(obs.outbound_success), a.window),
        mu_hat=ema(a.mu_hat, float(obs.inbound_request), a.window),
    )


def quantize_energy(p: float, p_max: float, bins: int) -> int:
    if p <= 0:
        return 0
    if math.isinf(p_max):
        return bins - 1
    return min(bins - 1, max(1, math.ceil((bins - 1) * p / p_max)))


def decide_action(mode: Mode, tokens: int, energy: float, p_max: float, energy_bins: int,
                  pi_hat: float, mu_hat: float, cost: float, table: PolicyTable | None) -> int:
    if mode is Mode.OBEDIENT_INFINITE:
        return 1
    if mode is Mode.NEVER_COOPERATE:
        return 0
    if energy <= 0:
        return 0
    if mode is Mode.OBEDIENT_FINITE:
        return 1
    e = quantize_energy(energy, p_max, energy_bins)
    return lookup(table, pi_hat, mu_hat, cost, tokens, e)


def decide(a: AgentState, inbound_cost: float, table: PolicyTable | None) -> int:
    return decide_action(a.mode, a.tokens, a.energy, a.p_max, a.energy_bins,
                         a.pi_hat, a.mu_hat, inbound_cost, table)


def token_transition(tokens: int, energy: float, event: Event, cost: float, max_tokens: int,
                     drain: bool = True) -> tuple[int, float]:
    """Next (tokens, energy) after relaying for someone or being relayed to.

    Holdings clamp at ``max_tokens`` and energy floors at zero.
    """
    if energy <= 0:
        raise InvalidEvent(f"{event.value} event in the dead state")
    if event is Event.PROVIDED:
        return min(tokens + 1, max_tokens), (max(0.0, energy - cost) if drain else energy)
    if event is Event.RECEIVED:
        if tokens <= 0:
            raise InvalidEvent("received relay service with no tokens")
        return tokens - 1, energy
    raise InvalidEvent(f"unknown event {event!r}")


def apply_token_event(a: AgentState, event: Event | str, cost: float = 0.0) -> AgentState:
    event = Event(event)
    tokens, energy = token_transition(a.tokens, a.energy, event, cost, a.max_tokens,
                                      drain=a.mode is not Mode.OBEDIENT_INFINITE)
    return replace(a, tokens=tokens, energy=energy)
