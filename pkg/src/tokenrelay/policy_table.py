"""Offline policy table: threshold policies solved over a (pi, mu, cost) grid.

Binary layout (little-endian)::

    b"PTBL" | u16 version | u32 n_pi, n_mu, n_cost | u16 max_tokens, energy_bins
    | f64 p_max, beta, benefit, tol | u16 solver_version
    | f64 pi_grid[n_pi] | f64 mu_grid[n_mu] | f64 cost_grid[n_cost]
    | i8 thresholds[n_pi * n_mu * n_cost * energy_bins]   (row-major, -1 = never)
    | u8 flags[n_pi * n_mu * n_cost]                       (bit 0: mu scaled to 1 - pi)
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import mdp
from .mdp import NonThresholdPolicy, StateSpace, ThresholdPolicy

log = logging.getLogger(__name__)

MAGIC = b"PTBL"
FORMAT_VERSION = 1
FLAG_MU_SCALED = 1

_HEADER = struct.Struct("<4sHIIIHHddddH")


class FormatError(ValueError):
    pass


def _check_grid(name, values, lo, hi, lo_open=False):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} grid must be a non-empty sequence")
    if np.any(np.diff(arr) <= 0):
        raise ValueError(f"{name} grid must be strictly increasing")
    if (arr[0] <= lo if lo_open else arr[0] < lo) or arr[-1] > hi:
        raise ValueError(f"{name} grid outside its domain")
    return tuple(float(x) for x in arr)


@dataclass(frozen=True)
class ParamGrid:
    pi_grid: tuple[float, ...]
    mu_grid: tuple[float, ...]
    cost_grid: tuple[float, ...]
    beta: float = 0.99
    benefit: float = 0.5
    space: StateSpace = field(default_factory=StateSpace)

    def __post_init__(self):
        object.__setattr__(self, "pi_grid", _check_grid("pi", self.pi_grid, 0.0, 0.5))
        object.__setattr__(self, "mu_grid", _check_grid("mu", self.mu_grid, 0.0, 1.0))
        object.__setattr__(self, "cost_grid",
                           _check_grid("cost", self.cost_grid, 0.0, np.inf, lo_open=True))
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (len(self.pi_grid), len(self.mu_grid), len(self.cost_grid))


def default_grid(beta: float = 0.99, p_max: float = 125.0) -> ParamGrid:
    steps = np.arange(1, 10)
    return ParamGrid(
        pi_grid=tuple(float(x) for x in np.round(0.05 * steps, 10)),
        mu_grid=tuple(float(x) for x in np.round(0.05 * steps, 10)),
        cost_grid=tuple(float(x) for x in np.round(0.025 * steps, 10)),
        beta=beta,
        benefit=0.5,
        space=StateSpace(max_tokens=20, energy_bins=11, p_max=p_max),
    )


@dataclass(frozen=True, eq=False)
class PolicyTable:
    grid: ParamGrid
    thresholds: np.ndarray  # (n_pi, n_mu, n_cost, energy_bins), int
    flags: np.ndarray  # (n_pi, n_mu, n_cost), uint8
    tol: float = 1e-6
    solver_version: int = mdp.SOLVER_VERSION

    def __eq__(self, other):
        return (isinstance(other, PolicyTable)
                and self.grid == other.grid
                and self.tol == other.tol
                and self.solver_version == other.solver_version
                and np.array_equal(self.thresholds, other.thresholds)
                and np.array_equal(self.flags, other.flags))

    __hash__ = None

    @property
    def n_entries(self) -> int:
        return int(np.prod(self.grid.shape))

    def entry(self, i_pi: int, i_mu: int, i_cost: int) -> ThresholdPolicy:
        return ThresholdPolicy(tuple(int(x) for x in self.thresholds[i_pi, i_mu, i_cost]))


def build_table(grid: ParamGrid, tol: float = 1e-6) -> PolicyTable:
    """Solve the MDP at every grid triple and keep the threshold per energy bin."""
    P, M, C = np.meshgrid(grid.pi_grid, grid.mu_grid, grid.cost_grid, indexing="ij")
    P, M, C = P.ravel(), M.ravel(), C.ravel()
    scaled = P + M > 1.0
    if np.any(scaled):
        log.warning("%d grid entries have pi + mu > 1; mu scaled to 1 - pi", int(scaled.sum()))
        M = np.where(scaled, 1.0 - P, M)
    _, actions, _, _ = mdp.solve_batch(P, M, C, grid.benefit, grid.beta, grid.space, tol)
    th, ok = mdp.thresholds_of(actions)
    if not np.all(ok):
        i = int(np.flatnonzero(~ok)[0])
        triple = (float(P[i]), float(M[i]), float(C[i]))
        raise NonThresholdPolicy(f"non-threshold optimal policy at (pi, mu, cost) = {triple}",
                                 params=triple)
    return PolicyTable(
        grid=grid,
        thresholds=th.reshape(grid.shape + (grid.space.energy_bins,)),
        flags=np.where(scaled, FLAG_MU_SCALED, 0).astype(np.uint8).reshape(grid.shape),
        tol=tol,
    )


def _midpoints(grid):
    g = np.asarray(grid, dtype=float)
    return (g[:-1] + g[1:]) / 2.0


def nearest(value: float, grid) -> int:
    """Index of the closest grid point; exact midpoints go to the lower point."""
    return int(np.searchsorted(_midpoints(grid), value, side="left"))


def lookup_entry(t: PolicyTable, pi_hat: float, mu_hat: float, cost: float) -> tuple[int, int, int]:
    g = t.grid
    return nearest(pi_hat, g.pi_grid), nearest(mu_hat, g.mu_grid), nearest(cost, g.cost_grid)


def lookup(t: PolicyTable, pi_hat: float, mu_hat: float, cost: float, k: int, e: int) -> int:
    if e <= 0:
        return 0
    i, j, c = lookup_entry(t, pi_hat, mu_hat, cost)
    return int(k <= t.thresholds[i, j, c, e])


def serialize(t: PolicyTable) -> bytes:
    g = t.grid
    sp = g.space
    if sp.max_tokens > 127:
        raise ValueError("thresholds above 127 do not fit the i8 encoding")
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, *g.shape, sp.max_tokens, sp.energy_bins,
                        sp.p_max, g.beta, g.benefit, t.tol, t.solver_version)
    grids = np.concatenate([g.pi_grid, g.mu_grid, g.cost_grid]).astype("<f8").tobytes()
    th = np.ascontiguousarray(t.thresholds, dtype="<i1").tobytes()
    flags = np.ascontiguousarray(t.flags, dtype="<u1").tobytes()
    return head + grids + th + flags


def deserialize(data: bytes) -> PolicyTable:
    if len(data) < _HEADER.size:
        raise FormatError("truncated header")
    (magic, version, n_pi, n_mu, n_c, max_tokens, bins,
     p_max, beta, benefit, tol, solver_version) = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError("bad magic bytes")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    n = n_pi * n_mu * n_c
    expected = _HEADER.size + 8 * (n_pi + n_mu + n_c) + n * bins + n
    if len(data) != expected:
        raise FormatError(f"payload is {len(data)} bytes, expected {expected}")
    off = _HEADER.size
    grids = np.frombuffer(data, dtype="<f8", count=n_pi + n_mu + n_c, offset=off)
    off += 8 * grids.size
    th = np.frombuffer(data, dtype="<i1", count=n * bins, offset=off)
    off += th.size
    flags = np.frombuffer(data, dtype="<u1", count=n, offset=off)
    try:
        grid = ParamGrid(
            pi_grid=tuple(grids[:n_pi]),
            mu_grid=tuple(grids[n_pi:n_pi + n_mu]),
            cost_grid=tuple(grids[n_pi + n_mu:]),
            beta=beta,
            benefit=benefit,
            space=StateSpace(max_tokens=max_tokens, energy_bins=bins, p_max=p_max),
        )
    except ValueError as exc:
        raise FormatError(f"invalid grid in payload: {exc}") from exc
    return PolicyTable(
        grid=grid,
        thresholds=th.astype(np.int64).reshape(n_pi, n_mu, n_c, bins),
        flags=flags.copy().reshape(n_pi, n_mu, n_c),
        tol=tol,
        solver_version=solver_version,
    )


def save(t: PolicyTable, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(t))


def load(path) -> PolicyTable:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
