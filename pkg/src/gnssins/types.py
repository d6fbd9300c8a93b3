"""Shared estimation types: constellations, state layout and epoch inputs."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .frames import EulerAngles


class Constellation(enum.Enum):
    GPS = "GPS"
    BEIDOU = "BeiDou"

    @classmethod
    def from_name(cls, name: str) -> "Constellation":
        for c in cls:
            if c.value.lower() == name.lower() or c.name.lower() == name.lower():
                return c
        raise ValueError(f"unknown constellation {name!r}")


POS = slice(0, 3)
VEL = slice(3, 6)
BIAS = slice(6, 9)


@dataclass(frozen=True)
class StateLayout:
    """Layout of a per-epoch state vector.

    Always position (3), velocity (3) and accelerometer bias (3); tightly
    coupled states append one clock-bias entry (meters) per constellation.
    """

    constellations: tuple[Constellation, ...] = ()

    @property
    def dim(self) -> int:
        return 9 + len(self.constellations)

    @property
    def has_clock(self) -> bool:
        return bool(self.constellations)

    def clock_index(self, constellation: Constellation) -> int:
        return 9 + self.constellations.index(constellation)

    def clock_slice(self) -> slice:
        return slice(9, self.dim)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.dim)


@dataclass
class EpochMeasurements:
    """One GNSS epoch of estimator input.

    ``accel_body_mean`` is the epoch-averaged raw specific force in the body
    frame (bias not removed); ``attitude`` is the AHRS attitude for the epoch.
    ``sats`` drive tightly coupled updates; ``fix_pos``/``fix_hdop`` drive
    loosely coupled updates and are None when no fix is available.
    """

    t: float
    dt: float
    accel_body_mean: np.ndarray
    attitude: EulerAngles
    sats: list = field(default_factory=list)
    fix_pos: Optional[np.ndarray] = None
    fix_hdop: Optional[float] = None

    @property
    def fix_available(self) -> bool:
        return self.fix_pos is not None


def constellations_present(sats: Sequence) -> tuple[Constellation, ...]:
    """Ordered tuple of constellations appearing in a satellite list."""
    seen: list[Constellation] = []
    for s in sats:
        if s.constellation not in seen:
            seen.append(s.constellation)
    return tuple(seen)
