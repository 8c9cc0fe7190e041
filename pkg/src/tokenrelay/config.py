"""Simulation configuration, the flat ``section.key = value`` file format and presets.

Example::

    # comments start with '#'
    sim.n_ues = 1500
    sim.token_supply = 9000
    channel.eta = 3
    grid.pi = 0.05:0.45:0.05

Grids accept ``start:stop:step`` (inclusive) or a comma-separated list.
Unknown keys are errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .agent import DEFAULT_MU_HAT0, DEFAULT_PI_HAT0, Mode
from .mdp import StateSpace
from .policy_table import ParamGrid
from .radio import ChannelParams, db_to_linear, dbm_to_watts


class ConfigError(ValueError):
    pass


def _grid(start, stop, step):
    n = int(round((stop - start) / step)) + 1
    return tuple(float(x) for x in np.round(start + step * np.arange(n), 12))


DEFAULT_PI = _grid(0.05, 0.45, 0.05)
DEFAULT_MU = _grid(0.05, 0.45, 0.05)
DEFAULT_COST = _grid(0.025, 0.225, 0.025)


@dataclass(frozen=True)
class SimConfig:
    n_ues: int = 1500
    cells_x: int = 10
    cells_y: int = 10
    cell_size: float = 1000.0
    slots: int = 3000
    slot_duration: float = 5.0
    token_supply: int = 9000
    seed: int = 0
    mode: Mode = Mode.TOKEN_LEARNING
    window: int = 50
    pi_hat0: float = DEFAULT_PI_HAT0
    mu_hat0: float = DEFAULT_MU_HAT0

    high_mobility_fraction: float = 1.0
    high_speed_kmh: tuple[float, float] = (50.0, 120.0)
    low_speed_kmh: tuple[float, float] = (0.0, 8.0)

    high_budget_fraction: float = 1.0
    high_budget_relays: float = 1000.0
    low_budget_relays: float = 40.0
    joules_per_relay: float = 0.125

    beta: float = 0.99
    benefit: float = 0.5
    max_tokens: int = 20
    energy_bins: int = 11
    solver_tol: float = 1e-6
    pi_grid: tuple[float, ...] = DEFAULT_PI
    mu_grid: tuple[float, ...] = DEFAULT_MU
    cost_grid: tuple[float, ...] = DEFAULT_COST

    channel: ChannelParams = field(default_factory=ChannelParams)
    tx_power_dbm: float = 15.0
    total_bandwidth_hz: float = 50e6
    grant_bandwidth_hz: float = 10e6
    target_sinr_db: float = 0.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "mode", Mode(self.mode))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        checks = [
            (self.n_ues >= 1, "sim.n_ues must be at least 1"),
            (self.cells_x >= 1 and self.cells_y >= 1, "cell counts must be positive"),
            (self.cell_size > 0, "sim.cell_size must be positive"),
            (self.slots >= 0, "sim.slots must be non-negative"),
            (self.slot_duration > 0, "sim.slot_duration must be positive"),
            (self.token_supply >= 0, "sim.token_supply must be non-negative"),
            (self.window >= 1, "sim.window must be at least 1"),
            (0 <= self.pi_hat0 <= 1 and 0 <= self.mu_hat0 <= 1, "initial estimates must lie in [0, 1]"),
            (0 <= self.high_mobility_fraction <= 1, "mobility.high_fraction must lie in [0, 1]"),
            (0 <= self.high_budget_fraction <= 1, "budget.high_fraction must lie in [0, 1]"),
            (_range_ok(self.high_speed_kmh) and _range_ok(self.low_speed_kmh), "speed ranges must be 0 <= lo <= hi"),
            (self.high_budget_relays > 0 and self.low_budget_relays > 0, "budget relay counts must be positive"),
            (self.joules_per_relay > 0, "budget.joules_per_relay must be positive"),
            (0 <= self.beta < 1, "mdp.beta must lie in [0, 1)"),
            (self.solver_tol > 0, "mdp.tol must be positive"),
            (self.grant_bandwidth_hz > 0 and self.total_bandwidth_hz >= self.grant_bandwidth_hz,
             "bandwidths must satisfy 0 < grant <= total"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.token_supply > self.n_ues * self.max_tokens:
            raise ConfigError(
                f"token supply {self.token_supply} exceeds capacity {self.n_ues * self.max_tokens}")
        try:
            self.param_grid(self.high_p_max)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def n_cells(self) -> int:
        return self.cells_x * self.cells_y

    @property
    def high_p_max(self) -> float:
        return self.high_budget_relays * self.joules_per_relay

    @property
    def low_p_max(self) -> float:
        return self.low_budget_relays * self.joules_per_relay

    @property
    def tx_power_w(self) -> float:
        return float(dbm_to_watts(self.tx_power_dbm))

    @property
    def target_sinr(self) -> float:
        return float(db_to_linear(self.target_sinr_db))

    @property
    def max_grants(self) -> int:
        return int(self.total_bandwidth_hz // self.grant_bandwidth_hz)

    def param_grid(self, p_max: float) -> ParamGrid:
        return ParamGrid(
            pi_grid=self.pi_grid, mu_grid=self.mu_grid, cost_grid=self.cost_grid,
            beta=self.beta, benefit=self.benefit,
            space=StateSpace(self.max_tokens, self.energy_bins, p_max),
        )

    def budget_classes(self) -> list[float]:
        """Distinct p_max values in use (one policy table is needed per value)."""
        out = []
        if self.high_budget_fraction > 0:
            out.append(self.high_p_max)
        if self.high_budget_fraction < 1 and self.low_p_max not in out:
            out.append(self.low_p_max)
        return out


def _range_ok(r):
    return len(r) == 2 and 0 <= r[0] <= r[1]


# --- flat key = value format ------------------------------------------------------


def _fmt_float(x):
    return repr(float(x))


def _fmt_tuple(xs):
    return ", ".join(_fmt_float(x) for x in xs)


def _parse_int(s):
    return int(s)


def _parse_float(s):
    return float(s)


def _parse_pair(s):
    parts = [float(p) for p in s.replace(":", ",").split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected 'lo, hi', got {s!r}")
    return tuple(parts)


def _parse_grid(s):
    s = s.strip()
    if ":" in s:
        parts = [float(p) for p in s.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError(f"expected start:stop:step, got {s!r}")
        return _grid(*parts)
    return tuple(float(p) for p in s.split(","))


# key -> (field, parser, formatter); channel.* keys map onto ChannelParams.
_KEYS = {
    "sim.n_ues": ("n_ues", _parse_int, str),
    "sim.cells_x": ("cells_x", _parse_int, str),
    "sim.cells_y": ("cells_y", _parse_int, str),
    "sim.cell_size_m": ("cell_size", _parse_float, _fmt_float),
    "sim.slots": ("slots", _parse_int, str),
    "sim.slot_duration_s": ("slot_duration", _parse_float, _fmt_float),
    "sim.token_supply": ("token_supply", _parse_int, str),
    "sim.seed": ("seed", _parse_int, str),
    "sim.mode": ("mode", Mode, lambda m: m.value),
    "sim.window": ("window", _parse_int, str),
    "sim.pi_hat0": ("pi_hat0", _parse_float, _fmt_float),
    "sim.mu_hat0": ("mu_hat0", _parse_float, _fmt_float),
    "mobility.high_fraction": ("high_mobility_fraction", _parse_float, _fmt_float),
    "mobility.high_speed_kmh": ("high_speed_kmh", _parse_pair, _fmt_tuple),
    "mobility.low_speed_kmh": ("low_speed_kmh", _parse_pair, _fmt_tuple),
    "budget.high_fraction": ("high_budget_fraction", _parse_float, _fmt_float),
    "budget.high_relays": ("high_budget_relays", _parse_float, _fmt_float),
    "budget.low_relays": ("low_budget_relays", _parse_float, _fmt_float),
    "budget.joules_per_relay": ("joules_per_relay", _parse_float, _fmt_float),
    "mdp.beta": ("beta", _parse_float, _fmt_float),
    "mdp.benefit": ("benefit", _parse_float, _fmt_float),
    "mdp.max_tokens": ("max_tokens", _parse_int, str),
    "mdp.energy_bins": ("energy_bins", _parse_int, str),
    "mdp.tol": ("solver_tol", _parse_float, _fmt_float),
    "grid.pi": ("pi_grid", _parse_grid, _fmt_tuple),
    "grid.mu": ("mu_grid", _parse_grid, _fmt_tuple),
    "grid.cost": ("cost_grid", _parse_grid, _fmt_tuple),
    "radio.tx_power_dbm": ("tx_power_dbm", _parse_float, _fmt_float),
    "radio.total_bandwidth_hz": ("total_bandwidth_hz", _parse_float, _fmt_float),
    "radio.grant_bandwidth_hz": ("grant_bandwidth_hz", _parse_float, _fmt_float),
    "radio.target_sinr_db": ("target_sinr_db", _parse_float, _fmt_float),
}

_CHANNEL_KEYS = {
    "channel.eta": "eta",
    "channel.d0_m": "d0",
    "channel.pl_d0_db": "pl_d0_db",
    "channel.shadow_sigma_db": "shadow_sigma_db",
    "channel.noise_dbm": "noise_dbm",
    "channel.noise_bandwidth_hz": "noise_bandwidth_hz",
    "channel.interference_w": "interference_w",
}


def parse_config_text(text: str, base: SimConfig | None = None) -> SimConfig:
    values: dict = {}
    channel: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, val = (p.strip() for p in line.partition("="))
        try:
            if key in _KEYS:
                name, parse, _ = _KEYS[key]
                values[name] = parse(val)
            elif key in _CHANNEL_KEYS:
                channel[_CHANNEL_KEYS[key]] = float(val)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    base = base or SimConfig()
    try:
        if channel:
            values["channel"] = replace(base.channel, **channel)
        return replace(base, **values)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, base: SimConfig | None = None) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base)


def format_config(cfg: SimConfig) -> str:
    """Fully resolved config; parsing it back yields an equal SimConfig."""
    lines = []
    for key, (name, _, fmt) in _KEYS.items():
        lines.append(f"{key} = {fmt(getattr(cfg, name))}")
    for key, name in _CHANNEL_KEYS.items():
        lines.append(f"{key} = {_fmt_float(getattr(cfg.channel, name))}")
    return "\n".join(lines) + "\n"


# --- presets and scaling ----------------------------------------------------------

# Evaluation scenarios. Budgets are in relays-before-dead; Joules follow from
# budget.joules_per_relay.
PRESETS: dict[str, dict] = {
    "baseline": {},
    "vc-scenario-1": dict(mode=Mode.TOKEN_LEARNING, high_mobility_fraction=0.7,
                          high_budget_fraction=0.7, high_budget_relays=100.0, low_budget_relays=40.0),
    "vc-scenario-2": dict(mode=Mode.OBEDIENT_INFINITE, high_mobility_fraction=0.7,
                          high_budget_fraction=0.7, high_budget_relays=100.0, low_budget_relays=40.0),
    "vc-scenario-3": dict(mode=Mode.OBEDIENT_FINITE, high_mobility_fraction=0.7,
                          high_budget_fraction=0.7, high_budget_relays=100.0, low_budget_relays=40.0),
    "vd-mobility": dict(beta=0.995, high_mobility_fraction=0.7, high_budget_fraction=1.0,
                        high_budget_relays=1000.0),
    "ve-budget": dict(beta=0.995, high_mobility_fraction=1.0, high_budget_fraction=0.7,
                      high_budget_relays=100.0, low_budget_relays=40.0),
    "vf-tokens": dict(high_mobility_fraction=1.0, high_budget_fraction=1.0,
                      high_budget_relays=1000.0, token_supply=8000),
}


def preset(name: str, base: SimConfig | None = None) -> SimConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(base or SimConfig(), **PRESETS[name])


def _factor_cells(n: int) -> tuple[int, int]:
    x = int(math.isqrt(n))
    while n % x:
        x -= 1
    return x, n // x


def scaled(cfg: SimConfig, scale: float) -> SimConfig:
    """Shrink UE count, cell count and token supply together, keeping densities."""
    if not 0 < scale <= 1:
        raise ConfigError("scale must lie in (0, 1]")
    if scale == 1:
        return cfg
    n_cells = max(1, round(cfg.n_cells * scale))
    cx, cy = _factor_cells(n_cells)
    n_ues = max(1, round(cfg.n_ues * scale))
    return replace(cfg, n_ues=n_ues, cells_x=cx, cells_y=cy,
                   token_supply=min(round(cfg.token_supply * scale), n_ues * cfg.max_tokens))
