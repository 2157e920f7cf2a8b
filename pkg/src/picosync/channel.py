"""Optical link model: power budget, propagation delay and slow drift."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidParameter
from .timing import DEFAULT_GROUP_INDEX, S, exact_round_trip


@dataclass(frozen=True)
class ChannelParams:
    """Fiber between a user station and the central node.

    ``connector_count`` is per one-way traversal; the round trip passes every
    connector twice.  ``tap_ratio`` is the fraction the 95/5 splitter sends
    towards the ranging mirror.  ``mirror_reflectivity = 0`` models the mirror
    output of the switchable splitter being disabled.
    """

    length: float
    attenuation: float = 0.2
    connector_count: int = 2
    connector_loss: float = 0.3
    tap_ratio: float = 0.05
    group_index: float = DEFAULT_GROUP_INDEX
    mirror_reflectivity: float = 1.0

    def __post_init__(self):
        if not self.length >= 0:
            raise InvalidParameter(f"length must be >= 0 km, got {self.length}")
        if not self.attenuation >= 0:
            raise InvalidParameter(f"attenuation must be >= 0 dB/km, got {self.attenuation}")
        if self.connector_count < 0 or int(self.connector_count) != self.connector_count:
            raise InvalidParameter(f"connector_count must be a non-negative integer, got {self.connector_count}")
        if not self.connector_loss >= 0:
            raise InvalidParameter(f"connector_loss must be >= 0 dB, got {self.connector_loss}")
        if not 0 < self.tap_ratio < 1:
            raise InvalidParameter(f"tap_ratio must lie in (0, 1), got {self.tap_ratio}")
        if not self.group_index >= 1:
            raise InvalidParameter(f"group_index must be >= 1, got {self.group_index}")
        if not 0 <= self.mirror_reflectivity <= 1:
            raise InvalidParameter(f"mirror_reflectivity must lie in [0, 1], got {self.mirror_reflectivity}")

    def one_way_loss(self) -> float:
        """Fiber plus connector loss for a single traversal, in dB."""
        return self.attenuation * self.length + self.connector_count * self.connector_loss

    def with_mirror(self, enabled: bool) -> "ChannelParams":
        return replace(self, mirror_reflectivity=1.0 if enabled else 0.0)


@dataclass(frozen=True)
class DriftModel:
    linear_rate: float = 0.0  # ps per second of elapsed time
    jitter_sigma: float = 0.0  # ps, one draw per measurement

    def __post_init__(self):
        if not self.jitter_sigma >= 0:
            raise InvalidParameter(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")

    @property
    def is_null(self) -> bool:
        return self.linear_rate == 0 and self.jitter_sigma == 0


def _db(ratio: float) -> float:
    return 10 * math.log10(ratio) if ratio > 0 else -math.inf


def received_power_roundtrip(launch: float, params: ChannelParams) -> float:
    """Power in dBm returning to the station photodetector after the mirror.

    The tap term is charged once; circulator insertion loss is assumed folded
    into the connector budget.
    """
    return (
        launch
        - 2 * params.one_way_loss()
        + _db(params.tap_ratio)
        + _db(params.mirror_reflectivity)
    )


def received_power_oneway(launch: float, params: ChannelParams) -> float:
    """Power in dBm reaching the central node's detector (pass-through arm)."""
    return launch - params.one_way_loss() + _db(1 - params.tap_ratio)


def round_trip_time(params: ChannelParams) -> int:
    """Station -> mirror -> station delay, rounded to the nearest picosecond."""
    return round(exact_round_trip(params.length, params.group_index))


def one_way_time(params: ChannelParams) -> int:
    """Station -> central beam splitter delay, rounded to the nearest picosecond."""
    return round(exact_round_trip(params.length, params.group_index) / 2)


def apply_drift(base_delay: int, elapsed: int, model: DriftModel, rng: np.random.Generator) -> int:
    """Delay after ``elapsed`` ps of linear drift plus one Gaussian jitter draw.

    The generator is only consumed when ``jitter_sigma > 0``.
    """
    if base_delay < 0:
        raise InvalidParameter("base_delay must be non-negative")
    shift = model.linear_rate * elapsed / S
    if model.jitter_sigma > 0:
        shift += rng.normal(0.0, model.jitter_sigma)
    return max(0, int(base_delay) + round(shift))
