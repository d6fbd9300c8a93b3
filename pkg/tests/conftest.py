"""Shared toy-scenario builders for estimator tests."""

import math

import numpy as np
import pytest

from gnssins.frames import EulerAngles, Geodetic, geodetic_to_ecef, rotation_global_from_local
from gnssins.noise_models import SatObservation
from gnssins.types import Constellation, EpochMeasurements, StateLayout

TOY_REF = Geodetic.from_degrees(22.3, 114.2, 10.0)
TOY_CLOCKS = {Constellation.GPS: 120.0, Constellation.BEIDOU: 95.0}


def toy_satellite_positions(n=8, ref=TOY_REF):
    """Fixed satellites on a ring of azimuths at alternating elevations."""
    ref_ecef = geodetic_to_ecef(ref)
    enu_to_ecef = rotation_global_from_local(ref)
    sats = []
    for i in range(n):
        az = 2.0 * math.pi * i / n + 0.3
        el = math.radians(35.0 + 20.0 * (i % 3))
        direction = np.array(
            [math.sin(az) * math.cos(el), math.cos(az) * math.cos(el), math.sin(el)]
        )
        pos = ref_ecef + 2.2e7 * (enu_to_ecef @ direction)
        constellation = Constellation.GPS if i % 2 == 0 else Constellation.BEIDOU
        sats.append((f"S{i:02d}", constellation, pos, el))
    return sats


def toy_epochs(
    n_epochs,
    velocity_enu=(5.0, 2.0, 0.0),
    clock_offsets=TOY_CLOCKS,
    pr_noise=None,
    fix_noise=None,
    n_sats=8,
):
    """Constant-velocity truth with exact (optionally perturbed) measurements.

    Returns (epochs, truth_positions). Zero acceleration keeps the epoch IMU
    input exactly zero, so no attitude or gravity handling is involved.
    """
    ref_ecef = geodetic_to_ecef(TOY_REF)
    vel = rotation_global_from_local(TOY_REF) @ np.asarray(velocity_enu, dtype=float)
    sat_defs = toy_satellite_positions(n_sats)
    epochs = []
    truth = []
    for k in range(n_epochs):
        t = float(k)
        pos = ref_ecef + vel * t
        truth.append(pos)
        sats = []
        for i, (sid, constellation, sat_pos, el) in enumerate(sat_defs):
            rho = float(np.linalg.norm(sat_pos - pos)) + clock_offsets[constellation]
            if pr_noise is not None:
                rho += float(pr_noise[k, i])
            sats.append(
                SatObservation(
                    sat_id=sid,
                    constellation=constellation,
                    sat_pos=sat_pos,
                    pseudorange=rho,
                    snr=50.0,
                    elevation=el,
                )
            )
        fix = pos.copy()
        if fix_noise is not None:
            fix = fix + fix_noise[k]
        epochs.append(
            EpochMeasurements(
                t=t,
                dt=1.0,
                accel_body_mean=np.zeros(3),
                attitude=EulerAngles(0.0, 0.0, 0.0),
                sats=sats,
                fix_pos=fix,
                fix_hdop=1.2,
            )
        )
    return epochs, truth


@pytest.fixture
def tc_layout():
    return StateLayout((Constellation.GPS, Constellation.BEIDOU))


@pytest.fixture
def lc_layout():
    return StateLayout()
