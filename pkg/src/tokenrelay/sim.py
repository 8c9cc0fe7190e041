"""Time-slotted cellular simulation with token-incentivised D2D relaying.

One ``numpy.random.Generator`` drives a run.  Draw order per run:

1. init: UE positions, waypoints, mobility classes, budget classes, speeds,
   then token dealing;
2. per slot: new waypoints then new speeds for UEs that reached their
   waypoint (ascending id); BS-to-UE shadowing for every UE (ascending id);
   then, for every DL UE in outage (ascending id), shadowing for the links
   from each other UE in its cell (ascending id) to it.

The number of draws depends only on positions, so runs that differ in mode,
token supply or budget mix share their mobility and channel realisations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import radio
from .agent import Event, Mode, decide_action, ema, token_transition
from .config import ConfigError, SimConfig
from .policy_table import PolicyTable, build_table

log = logging.getLogger(__name__)

KMH = 1000.0 / 3600.0


class InvariantViolation(RuntimeError):
    def __init__(self, message, slot=None, ue=None):
        super().__init__(f"slot {slot}: {message}" + (f" (UE {ue})" if ue is not None else ""))
        self.slot = slot
        self.ue = ue


class TableMismatch(ValueError):
    pass


@dataclass
class TokenLedger:
    holdings: np.ndarray
    initial: np.ndarray
    earned: np.ndarray
    spent: np.ndarray
    supply: int

    @classmethod
    def from_initial(cls, initial: np.ndarray) -> "TokenLedger":
        initial = np.asarray(initial, dtype=np.int64)
        return cls(initial.copy(), initial.copy(), np.zeros_like(initial),
                   np.zeros_like(initial), int(initial.sum()))

    def transfer(self, payer: int, payee: int) -> None:
        if self.holdings[payer] <= 0:
            raise InvariantViolation("payer holds no tokens", ue=payer)
        self.holdings[payer] -= 1
        self.spent[payer] += 1
        self.holdings[payee] += 1
        self.earned[payee] += 1

    def check(self, slot=None) -> None:
        total = int(self.holdings.sum())
        if total != self.supply:
            raise InvariantViolation(f"token supply {total} != {self.supply}", slot)
        bad = np.flatnonzero(self.spent > self.earned + self.initial)
        if bad.size:
            raise InvariantViolation("spent more tokens than earned plus initial", slot, int(bad[0]))
        bad = np.flatnonzero(self.holdings < 0)
        if bad.size:
            raise InvariantViolation("negative holding", slot, int(bad[0]))


@dataclass
class Counters:
    """Per-UE accumulators, only advanced while the UE is alive at slot start."""

    n: int
    lifetime: np.ndarray = None
    dl_slots: np.ndarray = None
    outage: np.ndarray = None
    eligible: np.ndarray = None
    racks_received: np.ndarray = None
    inbound: np.ndarray = None
    racks_sent: np.ndarray = None
    actual_rate: np.ndarray = None
    direct_rate: np.ndarray = None
    cost_spent: np.ndarray = None

    def __post_init__(self):
        for name in ("lifetime", "dl_slots", "outage", "eligible", "racks_received",
                     "inbound", "racks_sent"):
            setattr(self, name, np.zeros(self.n, dtype=np.int64))
        for name in ("actual_rate", "direct_rate", "cost_spent"):
            setattr(self, name, np.zeros(self.n))


@dataclass
class World:
    cfg: SimConfig
    tables: dict
    rng: np.random.Generator
    pos: np.ndarray
    waypoint: np.ndarray
    speed: np.ndarray
    high_mobility: np.ndarray
    high_budget: np.ndarray
    p_max: np.ndarray
    energy: np.ndarray
    pi_hat: np.ndarray
    mu_hat: np.ndarray
    ledger: TokenLedger
    cell: np.ndarray
    bs_pos: np.ndarray
    rr_offset: np.ndarray
    counters: Counters
    slot: int = 0
    token_hist: list = field(default_factory=list)
    events: list | None = None

    @property
    def n(self) -> int:
        return self.pos.shape[0]

    @property
    def area(self) -> tuple[float, float]:
        return (self.cfg.cells_x * self.cfg.cell_size, self.cfg.cells_y * self.cfg.cell_size)


# --- tables ----------------------------------------------------------------------

_TABLE_CACHE: dict = {}


def table_for(cfg: SimConfig, p_max: float) -> PolicyTable:
    grid = cfg.param_grid(p_max)
    key = (grid, cfg.solver_tol)
    if key not in _TABLE_CACHE:
        log.info("building policy table for p_max=%g J", p_max)
        _TABLE_CACHE[key] = build_table(grid, cfg.solver_tol)
    return _TABLE_CACHE[key]


def resolve_tables(cfg: SimConfig, supplied=()) -> dict[float, PolicyTable]:
    """One table per budget class; supplied tables must match the config exactly."""
    tables: dict[float, PolicyTable] = {}
    for t in supplied:
        expected = cfg.param_grid(t.grid.space.p_max)
        if t.grid != expected:
            raise TableMismatch(
                f"table (beta={t.grid.beta}, p_max={t.grid.space.p_max}) does not match config")
        if t.grid.space.p_max not in cfg.budget_classes():
            raise TableMismatch(f"no budget class with p_max={t.grid.space.p_max} J")
        tables[t.grid.space.p_max] = t
    if cfg.mode is Mode.TOKEN_LEARNING:
        for p_max in cfg.budget_classes():
            if p_max not in tables:
                tables[p_max] = table_for(cfg, p_max)
    return tables


# --- world construction ------------------------------------------------------------


def _cell_of(pos, cfg: SimConfig):
    cx = np.clip((pos[:, 0] // cfg.cell_size).astype(np.int64), 0, cfg.cells_x - 1)
    cy = np.clip((pos[:, 1] // cfg.cell_size).astype(np.int64), 0, cfg.cells_y - 1)
    return cy * cfg.cells_x + cx


def _draw_speed(rng, high, cfg: SimConfig, u=None):
    lo = np.where(high, cfg.high_speed_kmh[0], cfg.low_speed_kmh[0])
    hi = np.where(high, cfg.high_speed_kmh[1], cfg.low_speed_kmh[1])
    if u is None:
        u = rng.random(high.shape[0])
    return (lo + u * (hi - lo)) * KMH


def deal_tokens(rng, n: int, supply: int, cap: int) -> np.ndarray:
    """Place tokens one at a time on uniform UEs that are below the cap."""
    if supply > n * cap:
        raise ConfigError(f"cannot deal {supply} tokens to {n} UEs capped at {cap}")
    holdings = np.zeros(n, dtype=np.int64)
    placed = 0
    while placed < supply:
        for j in rng.integers(0, n, size=supply - placed):
            if holdings[j] < cap:
                holdings[j] += 1
                placed += 1
    return holdings


def init_world(cfg: SimConfig, tables: Mapping[float, PolicyTable] | None = None,
               record_events: bool = False) -> World:
    if tables is None:
        tables = resolve_tables(cfg)
    if cfg.mode is Mode.TOKEN_LEARNING:
        missing = [p for p in cfg.budget_classes() if p not in tables]
        if missing:
            raise TableMismatch(f"no policy table for p_max={missing}")
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_ues
    w, h = cfg.cells_x * cfg.cell_size, cfg.cells_y * cfg.cell_size
    pos = rng.uniform((0, 0), (w, h), size=(n, 2))
    waypoint = rng.uniform((0, 0), (w, h), size=(n, 2))
    high_mob = rng.random(n) < cfg.high_mobility_fraction
    high_bud = rng.random(n) < cfg.high_budget_fraction
    speed = _draw_speed(rng, high_mob, cfg)
    holdings = deal_tokens(rng, n, cfg.token_supply, cfg.max_tokens)

    p_max = np.where(high_bud, cfg.high_p_max, cfg.low_p_max)
    cx = (np.arange(cfg.n_cells) % cfg.cells_x + 0.5) * cfg.cell_size
    cy = (np.arange(cfg.n_cells) // cfg.cells_x + 0.5) * cfg.cell_size
    return World(
        cfg=cfg, tables=dict(tables), rng=rng, pos=pos, waypoint=waypoint, speed=speed,
        high_mobility=high_mob, high_budget=high_bud, p_max=p_max, energy=p_max.copy(),
        pi_hat=np.full(n, cfg.pi_hat0), mu_hat=np.full(n, cfg.mu_hat0),
        ledger=TokenLedger.from_initial(holdings), cell=_cell_of(pos, cfg),
        bs_pos=np.column_stack([cx, cy]), rr_offset=np.zeros(cfg.n_cells, dtype=np.int64),
        counters=Counters(n), events=[] if record_events else None,
    )


# --- per-slot steps ------------------------------------------------------------------


def mobility_step(w: World) -> World:
    """Random waypoint move with zero pause; arrivals draw a new waypoint and speed."""
    cfg = w.cfg
    step = w.speed * cfg.slot_duration
    delta = w.waypoint - w.pos
    dist = np.hypot(delta[:, 0], delta[:, 1])
    arrive = dist <= step
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(arrive | (dist == 0), 0.0, step / dist)
    w.pos = np.where(arrive[:, None], w.waypoint, w.pos + delta * frac[:, None])
    idx = np.flatnonzero(arrive)
    if idx.size:
        width, height = w.area
        w.waypoint[idx] = w.rng.uniform((0, 0), (width, height), size=(idx.size, 2))
        w.speed[idx] = _draw_speed(w.rng, w.high_mobility[idx], cfg)
    w.cell = _cell_of(w.pos, cfg)
    return w


def schedule_downlink(w: World) -> tuple[np.ndarray, np.ndarray]:
    """Round-robin DL grants per cell; returns boolean (dl, idle) masks."""
    cfg = w.cfg
    grants = cfg.max_grants
    order = np.argsort(w.cell, kind="stable")
    counts = np.bincount(w.cell, minlength=cfg.n_cells)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    rank = np.empty(w.n, dtype=np.int64)
    rank[order] = np.arange(w.n) - starts[w.cell[order]]
    n_c = counts[w.cell]
    dl = np.mod(rank - w.rr_offset[w.cell], n_c) < np.minimum(grants, n_c)
    w.rr_offset += grants
    return dl, ~dl


def _distance(a, b):
    d = a - b
    return np.hypot(d[..., 0], d[..., 1])


def _check_slot(w: World, alive0):
    w.ledger.check(w.slot)
    c = w.counters
    bad = np.flatnonzero(c.actual_rate < c.direct_rate)
    if bad.size:
        raise InvariantViolation("actual throughput below direct throughput", w.slot, int(bad[0]))
    if np.any(w.energy < 0):
        raise InvariantViolation("negative energy", w.slot, int(np.flatnonzero(w.energy < 0)[0]))
    if np.any(w.ledger.holdings > w.cfg.max_tokens):
        raise InvariantViolation("holding above cap", w.slot)


def simulate_slot(w: World) -> World:
    cfg = w.cfg
    ch = cfg.channel
    mode = cfg.mode
    tokens = w.ledger.holdings
    bw = cfg.grant_bandwidth_hz
    target = cfg.target_sinr
    p_tx = cfg.tx_power_w
    sigma = ch.shadow_sigma_db
    c = w.counters

    alive0 = w.energy > 0
    mobility_step(w)
    dl, idle = schedule_downlink(w)

    dl_ids = np.flatnonzero(dl)
    chi_bs = w.rng.normal(0.0, sigma, size=w.n)
    chi = chi_bs[dl_ids]
    d0 = _distance(w.pos[dl_ids], w.bs_pos[w.cell[dl_ids]])
    g0 = radio.sinr(radio.link_gain(d0, chi, ch), p_tx, bw, ch)
    direct = radio.shannon_rate(g0, bw)
    actual = direct.copy()

    outbound = np.zeros(w.n, dtype=bool)
    inbound = np.zeros(w.n, dtype=bool)
    pool = idle & (w.energy > 0)
    drain = mode is not Mode.OBEDIENT_INFINITE

    for pos_i in np.flatnonzero(g0 < target):
        j = int(dl_ids[pos_i])
        peers = np.flatnonzero(w.cell == w.cell[j])
        peers = peers[peers != j]
        chi_peer = w.rng.normal(0.0, sigma, size=peers.size)
        if not alive0[j]:
            continue
        c.outage[j] += 1
        if mode.uses_tokens and tokens[j] <= 0:
            continue
        c.eligible[j] += 1
        avail = pool[peers]
        cands = peers[avail]
        if cands.size == 0:
            continue
        g_bs_relay = radio.sinr(
            radio.link_gain(_distance(w.pos[cands], w.bs_pos[w.cell[j]]), chi_bs[cands], ch),
            p_tx, bw, ch)
        g_relay_dest = radio.link_gain(_distance(w.pos[cands], w.pos[j]), chi_peer[avail], ch)
        offer = radio.select_relay(cands, g_bs_relay, g_relay_dest, bw, ch, target, p_tx,
                                   cfg.slot_duration)
        if offer is None:
            continue
        r = offer.relay_id
        pool[r] = False
        inbound[r] = True
        c.inbound[r] += 1
        act = decide_action(mode, int(tokens[r]), float(w.energy[r]), float(w.p_max[r]),
                            cfg.energy_bins, float(w.pi_hat[r]), float(w.mu_hat[r]), offer.cost,
                            w.tables.get(float(w.p_max[r])))
        if mode.uses_tokens and tokens[r] >= cfg.max_tokens:
            # a full holder cannot be paid without destroying a token
            act = 0
        if w.events is not None:
            w.events.append((w.slot, j, r, act, offer.cost))
        if not act:
            continue
        _, w.energy[r] = token_transition(int(tokens[r]), float(w.energy[r]), Event.PROVIDED,
                                          offer.cost, cfg.max_tokens, drain=drain)
        if mode.uses_tokens:
            token_transition(int(tokens[j]), float(w.energy[j]), Event.RECEIVED, 0.0,
                             cfg.max_tokens)
            w.ledger.transfer(j, r)
        c.racks_sent[r] += 1
        c.racks_received[j] += 1
        c.cost_spent[r] += offer.cost
        outbound[j] = True
        actual[pos_i] = radio.shannon_rate(offer.effective_sinr, bw)

    live_dl = alive0[dl_ids]
    ids = dl_ids[live_dl]
    c.dl_slots[ids] += 1
    c.direct_rate[ids] += direct[live_dl]
    c.actual_rate[ids] += actual[live_dl]
    c.lifetime += alive0

    w.pi_hat = ema(w.pi_hat, outbound.astype(float), cfg.window)
    w.mu_hat = ema(w.mu_hat, inbound.astype(float), cfg.window)
    w.token_hist.append(np.bincount(tokens, minlength=cfg.max_tokens + 1))
    _check_slot(w, alive0)
    w.slot += 1
    return w


def run(cfg: SimConfig, tables: Mapping[float, PolicyTable] | None = None):
    from .metrics import compute_metrics

    w = init_world(cfg, tables)
    for _ in range(cfg.slots):
        simulate_slot(w)
    return compute_metrics(w)
