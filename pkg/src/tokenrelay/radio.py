"""Downlink channel, SINR/rate and amplify-and-forward relay selection.

All functions are pure: shadowing samples are drawn by the caller and passed
in, so results depend only on the arguments.  Array inputs broadcast the way
numpy does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


# Noise power over the 10 MHz grant that puts the network-average outage
# probability at 0.1 for 1 km cells; reproduced by calibrate_noise_dbm().
CALIBRATED_NOISE_DBM = -3.07


@dataclass(frozen=True)
class ChannelParams:
    """Log-distance pathloss with log-normal shadowing.

    ``noise_dbm`` is the in-band noise power over ``noise_bandwidth_hz``; the
    spectral density used in the SINR is derived from it, so a link granted
    exactly that bandwidth sees exactly that noise power.
    """

    eta: float = 3.0
    d0: float = 100.0
    pl_d0_db: float = -5.0
    shadow_sigma_db: float = 2.0
    noise_dbm: float = CALIBRATED_NOISE_DBM
    noise_bandwidth_hz: float = 10e6
    interference_w: float = 0.0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.d0 <= 0:
            raise ValueError("d0 must be positive")
        if self.shadow_sigma_db < 0:
            raise ValueError("shadow_sigma_db must be non-negative")
        if self.noise_bandwidth_hz <= 0:
            raise ValueError("noise_bandwidth_hz must be positive")
        if self.interference_w < 0:
            raise ValueError("interference_w must be non-negative")

    @property
    def noise_psd(self) -> float:
        """Noise power spectral density N0 in W/Hz."""
        return float(dbm_to_watts(self.noise_dbm)) / self.noise_bandwidth_hz

    def noise_power(self, bandwidth):
        return bandwidth * self.noise_psd + self.interference_w


@dataclass(frozen=True)
class LinkBudget:
    gain: float
    bandwidth: float
    tx_power: float


@dataclass(frozen=True)
class RelayOffer:
    relay_id: int
    required_power: float
    effective_sinr: float
    cost: float


def link_gain_db(distance, shadow_db, ch: ChannelParams):
    d = np.maximum(np.asarray(distance, dtype=float), ch.d0)
    return -ch.pl_d0_db - 10.0 * ch.eta * np.log10(d / ch.d0) - np.asarray(shadow_db, dtype=float)


def link_gain(distance, shadow_db, ch: ChannelParams):
    """Linear power gain of a link; distances below d0 are clamped to d0."""
    return db_to_linear(link_gain_db(distance, shadow_db, ch))


def sinr(gain, tx_power, bandwidth, ch: ChannelParams):
    return np.asarray(gain, dtype=float) * tx_power / ch.noise_power(bandwidth)


def shannon_rate(sinr_linear, bandwidth):
    return bandwidth * np.log1p(np.asarray(sinr_linear, dtype=float)) / np.log(2.0)


def sinr_and_rate(lb: LinkBudget, ch: ChannelParams) -> tuple[float, float]:
    g = float(sinr(lb.gain, lb.tx_power, lb.bandwidth, ch))
    return g, float(shannon_rate(g, lb.bandwidth))


def af_sinr(g1, g2):
    """End-to-end SINR of a two-hop amplify-and-forward link."""
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    out = g1 * g2 / (g1 + g2 + 1.0)
    return out if out.ndim else float(out)


def required_relay_power(gamma_bs_relay, relay_dest_gain, bandwidth, ch: ChannelParams,
                         gamma_target: float, p_max: float):
    """Vectorised minimum relay power; ``inf`` marks an infeasible candidate.

    The first hop must beat the target strictly, since the AF SINR is below
    both hop SINRs.  The second hop then needs
    ``target * (g1 + 1) / (g1 - target)``.
    """
    if gamma_target <= 0:
        raise ValueError("gamma_target must be positive")
    g1 = np.asarray(gamma_bs_relay, dtype=float)
    gain = np.asarray(relay_dest_gain, dtype=float)
    ok = g1 > gamma_target
    with np.errstate(divide="ignore", invalid="ignore"):
        g_req = np.where(ok, gamma_target * (g1 + 1.0) / (g1 - gamma_target), np.inf)
        power = g_req * ch.noise_power(bandwidth) / gain
    power = np.where(ok & (power <= p_max), power, np.inf)
    return power


def min_relay_power(gamma_bs_relay: float, relay_dest_gain: float, bandwidth: float,
                    ch: ChannelParams, gamma_target: float, p_max: float) -> float | None:
    """Least relay transmit power meeting the target end-to-end SINR, or None."""
    p = float(required_relay_power(gamma_bs_relay, relay_dest_gain, bandwidth, ch,
                                   gamma_target, p_max))
    return None if np.isinf(p) else p


def select_relay(candidate_ids, gamma_bs_relay, relay_dest_gain, bandwidth: float,
                 ch: ChannelParams, gamma_target: float, p_max: float,
                 slot_duration: float) -> RelayOffer | None:
    """Pick the feasible candidate needing the least power (ties: lower id)."""
    ids = np.asarray(candidate_ids, dtype=np.int64)
    if ids.size == 0:
        return None
    order = np.argsort(ids, kind="stable")
    ids = ids[order]
    g1 = np.asarray(gamma_bs_relay, dtype=float)[order]
    gain = np.asarray(relay_dest_gain, dtype=float)[order]
    power = required_relay_power(g1, gain, bandwidth, ch, gamma_target, p_max)
    best = int(np.argmin(power))
    if np.isinf(power[best]):
        return None
    p = float(power[best])
    g2 = float(sinr(gain[best], p, bandwidth, ch))
    return RelayOffer(
        relay_id=int(ids[best]),
        required_power=p,
        effective_sinr=af_sinr(float(g1[best]), g2),
        cost=slot_duration * p,
    )


def outage_probability(noise_dbm: float, ch: ChannelParams, cell_size: float,
                       bs_power_dbm: float, target_sinr_db: float,
                       samples: int = 400_000, seed: int = 0) -> float:
    """Monte-Carlo outage probability for a uniform position in a square cell."""
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-cell_size / 2, cell_size / 2, size=(samples, 2))
    chi = rng.normal(0.0, ch.shadow_sigma_db, size=samples)
    d = np.hypot(xy[:, 0], xy[:, 1])
    rx_dbm = bs_power_dbm + link_gain_db(d, chi, ch)
    return float(np.mean(rx_dbm - noise_dbm < target_sinr_db))


def calibrate_noise_dbm(target_outage: float, ch: ChannelParams, cell_size: float = 1000.0,
                        bs_power_dbm: float = 15.0, target_sinr_db: float = 0.0,
                        samples: int = 400_000, seed: int = 0) -> float:
    """Noise power (dBm over the grant) giving the requested outage probability."""
    from scipy.optimize import brentq

    def excess(n):
        return outage_probability(n, ch, cell_size, bs_power_dbm, target_sinr_db,
                                  samples, seed) - target_outage

    return float(brentq(excess, -60.0, 60.0, xtol=1e-4))
