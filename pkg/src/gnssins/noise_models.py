"""Measurement covariance models.

Loosely coupled position fixes are weighted by HDOP times a user-equivalent
range error; tightly coupled pseudoranges are weighted per satellite from
elevation and SNR. The process-side factor covariances (motion model, INS)
are fixed diagonals taken from the inertial unit specification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .frames import ecef_to_geodetic, rotation_global_from_local
from .types import Constellation, constellations_present


class GeometryError(ValueError):
    """Satellite geometry too degenerate for the requested computation."""


@dataclass(frozen=True)
class WeightingParams:
    """Elevation/SNR weighting constants plus the LC range-error scale.

    Defaults follow the goGPS-style model: SNR threshold ``T`` (dB-Hz),
    shape constants ``a``, ``big_a`` and ``big_f``, and the user-equivalent
    range error ``s_user`` (meters) used for position-fix covariance.
    """

    T: float = 45.0
    a: float = 32.0
    big_a: float = 30.0
    big_f: float = 10.0
    s_user: float = 10.0

    def __post_init__(self) -> None:
        if self.big_f == self.T:
            raise ValueError("F and T must differ")
        if self.a <= 0:
            raise ValueError("a must be positive")
        if self.s_user <= 0:
            raise ValueError("s_user must be positive")


@dataclass
class SatObservation:
    """One satellite pseudorange observation at a GNSS epoch."""

    sat_id: str
    constellation: Constellation
    sat_pos: np.ndarray
    pseudorange: float
    snr: float
    elevation: float
    azimuth: Optional[float] = None
    nlos_truth: Optional[bool] = None

    def __post_init__(self) -> None:
        self.sat_pos = np.asarray(self.sat_pos, dtype=float)
        if not 0.0 < self.elevation <= math.pi / 2:
            raise ValueError(f"elevation {self.elevation} outside (0, pi/2]")
        if self.pseudorange <= 0:
            raise ValueError("pseudorange must be positive")


def lc_fix_covariance(hdop: float, s_user: float) -> np.ndarray:
    """Diagonal variances for a position fix: (hdop * s_user)^2 per axis."""
    if hdop <= 0:
        raise ValueError("hdop must be positive")
    return np.full(3, (hdop * s_user) ** 2)


def compute_hdop(sats: Sequence[SatObservation], receiver: np.ndarray) -> float:
    """Horizontal dilution of precision from the line-of-sight geometry.

    The geometry matrix holds unit line-of-sight vectors in the ENU frame at
    the receiver, augmented with one clock column per constellation present.
    """
    if len(sats) < 4:
        raise GeometryError(f"need at least 4 satellites, got {len(sats)}")
    receiver = np.asarray(receiver, dtype=float)
    enu_rot = rotation_global_from_local(ecef_to_geodetic(receiver)).T
    consts = constellations_present(sats)
    g = np.zeros((len(sats), 3 + len(consts)))
    for i, sat in enumerate(sats):
        los = sat.sat_pos - receiver
        rng = np.linalg.norm(los)
        if rng == 0.0:
            raise GeometryError(f"satellite {sat.sat_id} coincides with receiver")
        g[i, :3] = enu_rot @ (los / rng)
        g[i, 3 + consts.index(sat.constellation)] = 1.0
    gtg = g.T @ g
    if np.linalg.cond(gtg) > 1e12:
        raise GeometryError("singular satellite geometry")
    cov = np.linalg.inv(gtg)
    return math.sqrt(cov[0, 0] + cov[1, 1])


def pseudorange_weight(el: float, snr: float, p: WeightingParams) -> float:
    """Per-satellite pseudorange variance (m^2) from elevation and SNR.

    Follows the goGPS-style model: the variance is an SNR bracket divided by
    sin^2(el), so it grows toward the horizon and grows further as the SNR
    falls below the threshold T. At or above T the bracket clamps to 1 and
    the variance reduces to 1/sin^2(el), i.e. 1 m^2 at zenith.
    """
    if not 0.0 < el <= math.pi / 2:
        raise ValueError(f"elevation {el} outside (0, pi/2]")
    sin2 = math.sin(el) ** 2
    if snr >= p.T:
        bracket = 1.0
    else:
        term = 10.0 ** (-(snr - p.T) / p.a)
        slope = (p.big_a / 10.0 ** (-(p.big_f - p.T) / p.a) - 1.0) * (snr - p.T) / (
            p.big_f - p.T
        ) + 1.0
        bracket = term * slope
    return bracket / sin2


def tc_covariance(sats: Sequence[SatObservation], p: WeightingParams) -> np.ndarray:
    """Diagonal pseudorange variances, ordered like the satellite list."""
    if not sats:
        raise ValueError("empty satellite list")
    return np.array([pseudorange_weight(s.elevation, s.snr, p) for s in sats])


def motion_model_cov() -> np.ndarray:
    """Motion-model factor variances: position (m^2) then accel bias ((m/s^2)^2)."""
    return np.array([0.3**2] * 3 + [0.01**2] * 3)


def ins_cov() -> np.ndarray:
    """INS velocity-factor variances ((m/s)^2)."""
    return np.array([0.15**2] * 3)
