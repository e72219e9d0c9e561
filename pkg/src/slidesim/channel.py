"""Downlink channel: log-distance path loss with flat Rayleigh fading."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .profiles import UserSpec


class ChannelError(ValueError):
    pass


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class BsConfig:
    total_bandwidth_hz: float = 400e6
    tx_psd_dbm_per_hz: float = -29.0
    noise_psd_dbm_per_hz: float = -174.0
    coverage_radius_m: float = 200.0
    pathloss_exponent: float = 3.5
    pathloss_ref_db: float = 30.0
    # path loss is flat inside the reference distance
    min_distance_m: float = 1.0

    def __post_init__(self):
        if not self.total_bandwidth_hz > 0:
            raise ChannelError("total_bandwidth_hz must be > 0")
        if not self.coverage_radius_m > 0:
            raise ChannelError("coverage_radius_m must be > 0")

    @property
    def tx_psd_w(self) -> float:
        return dbm_to_watts(self.tx_psd_dbm_per_hz)

    @property
    def noise_psd_w(self) -> float:
        return dbm_to_watts(self.noise_psd_dbm_per_hz)


@dataclass(frozen=True)
class ChannelState:
    gain_linear: float
    spectral_efficiency: float
    clamped: bool = False


def spectral_efficiency(tx_psd_w: float, gain: float, noise_psd_w: float) -> float:
    """Shannon spectral efficiency in bits/s/Hz for linear PSDs."""
    return math.log2(1.0 + tx_psd_w * gain / noise_psd_w)


def channel_state(bs: BsConfig, gain: float, clamped: bool = False) -> ChannelState:
    if gain < 0:
        raise ChannelError("channel gain must be >= 0")
    return ChannelState(gain, spectral_efficiency(bs.tx_psd_w, gain, bs.noise_psd_w), clamped)


def pathloss_gain(bs: BsConfig, distance_m: float) -> float:
    d = max(distance_m, bs.min_distance_m)
    loss_db = bs.pathloss_ref_db + 10.0 * bs.pathloss_exponent * math.log10(d)
    return 10.0 ** (-loss_db / 10.0)


def _fading_rng(rng_seed) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def sample_channel(bs: BsConfig, distance_m: float, rng_seed) -> ChannelState:
    """Path loss times a unit-mean-power Rayleigh power gain."""
    if not 0 < distance_m <= bs.coverage_radius_m:
        raise ChannelError(
            f"distance {distance_m} m outside (0, {bs.coverage_radius_m}] m")
    fading = _fading_rng(rng_seed).exponential(1.0)
    return channel_state(bs, pathloss_gain(bs, distance_m) * fading)


def trajectory(start: tuple[float, float], speed_mps: float, heading_rad: float,
               horizon_s: float, num_samples: int = 10) -> np.ndarray:
    """Positions of a straight-line walk sampled uniformly over the horizon."""
    t = np.linspace(0.0, horizon_s, num_samples)
    step = speed_mps * t
    return np.column_stack([start[0] + step * math.cos(heading_rad),
                            start[1] + step * math.sin(heading_rad)])


def worst_case_channel(bs: BsConfig, user: UserSpec, horizon_s: float, rng_seed,
                       num_samples: int = 10) -> ChannelState:
    """Minimum-gain channel along the user's trajectory within the horizon.

    The fading draw is shared by all trajectory points (block fading over the
    deadline), so a static user gets exactly the ``sample_channel`` result for
    the same seed. Points leaving the coverage disk are pulled back onto its
    boundary and the returned state is flagged ``clamped``.
    """
    if not horizon_s > 0:
        raise ChannelError("horizon_s must be > 0")
    rng = _fading_rng(rng_seed)
    fading = rng.exponential(1.0)
    heading = rng.uniform(0.0, 2.0 * math.pi)
    points = trajectory(user.position_m, user.speed_mps, heading, horizon_s, num_samples)
    dist = np.hypot(points[:, 0], points[:, 1])
    clamped = bool(np.any(dist > bs.coverage_radius_m))
    dist = np.minimum(dist, bs.coverage_radius_m)
    gains = [pathloss_gain(bs, d) * fading for d in dist]
    return channel_state(bs, min(gains), clamped)
