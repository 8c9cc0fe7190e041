"""Token-incentivised device-to-device relaying: MDP cooperation policies,
online learning and a cellular network simulator."""

from .agent import AgentState, Mode, SlotObservation
from .config import SimConfig
from .mdp import CoopState, EnvParams, StateSpace, ThresholdPolicy
from .policy_table import ParamGrid, PolicyTable, build_table
from .sim import init_world, run

__all__ = [
    "AgentState", "CoopState", "EnvParams", "Mode", "ParamGrid", "PolicyTable", "SimConfig",
    "SlotObservation", "StateSpace", "ThresholdPolicy", "build_table", "init_world", "run",
]

__version__ = "0.1.0"
