"""Synthetic urban-canyon dataset generator.

Produces a ground-truth trajectory through waypoint legs with corner blends,
a drifting GPS/BeiDou constellation, pseudoranges with LOS noise and a
positive long-tail NLOS bias where buildings mask the sky, SNR consistent
with the reception class, body-frame IMU specific force with bias, AHRS
attitude, and single-epoch weighted least-squares fixes for the loosely
coupled path. Everything is deterministic in (config, seed).

The canyon is modeled as azimuth sectors with a minimum line-of-sight
elevation: satellites above the mask are LOS, satellites within
``nlos_depth_deg`` below it are received with an NLOS bias, anything deeper
is blocked entirely. Optional deep intervals raise every mask for a time
span to emulate driving under dense high-rise cover.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .frames import (
    EulerAngles,
    Geodetic,
    ecef_to_geodetic,
    enu_to_ecef,
    geodetic_to_ecef,
    rotation_global_from_local,
    rotation_local_from_body,
)
from .noise_models import GeometryError, SatObservation, WeightingParams, compute_hdop
from .residual_analysis import GmmComponent, GmmModel
from .types import Constellation, EpochMeasurements

MEO_RADIUS_M = 26_560e3
HARD_HORIZON_RAD = math.radians(5.0)
CSV_FLOAT = "%.12g"


@dataclass(frozen=True)
class Waypoint:
    geo: Geodetic
    speed: float

    def __post_init__(self) -> None:
        if self.speed <= 0:
            raise ValueError("waypoint speed must be positive")


@dataclass(frozen=True)
class MaskSector:
    az_min_deg: float
    az_max_deg: float
    min_elevation_deg: float

    def contains(self, az_deg: float) -> bool:
        az = az_deg % 360.0
        lo, hi = self.az_min_deg % 360.0, self.az_max_deg % 360.0
        if lo <= hi:
            return lo <= az <= hi
        return az >= lo or az <= hi


@dataclass(frozen=True)
class DeepInterval:
    """Time span of dense high-rise cover blocking everything below a floor."""

    t_start: float
    t_end: float
    block_floor_deg: float

    def active(self, t: float) -> bool:
        return self.t_start <= t < self.t_end


@dataclass(frozen=True)
class ClockModel:
    bias_m: float
    drift_mps: float

    def at(self, t: float) -> float:
        return self.bias_m + self.drift_mps * t


@dataclass(frozen=True)
class SnrModel:
    mean: float
    sigma: float


def _default_nlos_models() -> dict:
    # three components per constellation: mild diffuse reflections, medium
    # multipath, and the long-tail NLOS component (largest mean)
    return {
        "GPS": GmmModel(
            (
                GmmComponent(0.5, 1.5, 3.0),
                GmmComponent(0.3, 7.0, 5.5),
                GmmComponent(0.2, 38.76, 13.0),
            )
        ),
        "BeiDou": GmmModel(
            (
                GmmComponent(0.5, 1.5, 3.0),
                GmmComponent(0.3, 6.0, 5.0),
                GmmComponent(0.2, 32.62, 11.0),
            )
        ),
    }


@dataclass
class SimConfig:
    waypoints: list[Waypoint]
    duration_s: float = 300.0
    imu_rate_hz: float = 100.0
    gnss_rate_hz: float = 1.0
    los_sigma_m: float = 2.0
    nlos_model: dict = field(default_factory=_default_nlos_models)
    canyon_sectors: list[MaskSector] = field(default_factory=list)
    open_sky_min_elevation_deg: float = 10.0
    nlos_depth_deg: float = 30.0
    nlos_receive_prob: float = 1.0  # chance a masked satellite is received at all
    snr_bias_slope_db_per_m: float = 0.0  # SNR drop per meter of NLOS bias
    deep_intervals: list[DeepInterval] = field(default_factory=list)
    accel_bias_true: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_noise_sigma: float = 0.0
    attitude_noise_deg: float = 0.0
    clock_models: dict = field(
        default_factory=lambda: {
            "GPS": ClockModel(120.0, 0.0),
            "BeiDou": ClockModel(95.0, 0.0),
        }
    )
    snr_los: SnrModel = SnrModel(48.0, 2.0)
    snr_nlos: SnrModel = SnrModel(37.0, 3.0)
    n_satellites: int = 14
    n_high_satellites: int = 5
    max_accel: float = 1.5
    seed: int = 0

    def __post_init__(self) -> None:
        self.accel_bias_true = np.asarray(self.accel_bias_true, dtype=float)
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        if self.imu_rate_hz <= 0 or self.gnss_rate_hz <= 0:
            raise ValueError("rates must be positive")
        if self.los_sigma_m < 0:
            raise ValueError("los_sigma must be non-negative")
        if len(self.waypoints) < 2:
            raise ValueError("need at least two waypoints")
        for s in self.canyon_sectors:
            if not 0.0 <= s.min_elevation_deg < 90.0:
                raise ValueError("mask elevations must lie in [0, 90)")

    @property
    def ref(self) -> Geodetic:
        return self.waypoints[0].geo

    def mask_elevation_deg(self, az_deg: float, t: float) -> float:
        mask = self.open_sky_min_elevation_deg
        for sector in self.canyon_sectors:
            if sector.contains(az_deg):
                mask = max(mask, sector.min_elevation_deg)
        return min(mask, 89.0)

    def block_floor_deg(self, t: float) -> float:
        floor = 0.0
        for interval in self.deep_intervals:
            if interval.active(t):
                floor = max(floor, interval.block_floor_deg)
        return floor

    def nlos_bias_component(self, constellation: Constellation) -> GmmComponent:
        model = self.nlos_model[constellation.value]
        return max(model.components, key=lambda c: c.mean)


# ---------------------------------------------------------------------------
# Trajectory
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrajectoryPiece:
    t0: float
    duration: float
    p0: np.ndarray  # ENU, meters
    v0: np.ndarray  # ENU, m/s
    accel: np.ndarray  # ENU, m/s^2


def build_trajectory(cfg: SimConfig) -> list[TrajectoryPiece]:
    """Piecewise constant-velocity legs joined by constant-acceleration blends.

    Each blend replaces the waypoint corner: it starts half a blend early on
    the incoming leg and lands exactly on the outgoing leg, which keeps
    position and velocity continuous with bounded acceleration.
    """
    ref = cfg.ref
    ref_ecef = geodetic_to_ecef(ref)
    rot = rotation_global_from_local(ref)
    points = [rot.T @ (geodetic_to_ecef(w.geo) - ref_ecef) for w in cfg.waypoints]
    speeds = [w.speed for w in cfg.waypoints]

    directions = []
    lengths = []
    for a, b in zip(points, points[1:]):
        d = b - a
        length = float(np.linalg.norm(d))
        if length < 1e-9:
            raise ValueError("coincident waypoints")
        directions.append(d / length)
        lengths.append(length)

    velocities = [speeds[i] * directions[i] for i in range(len(directions))]
    blends = []
    for i in range(len(directions) - 1):
        dv = velocities[i + 1] - velocities[i]
        tau = max(float(np.linalg.norm(dv)) / cfg.max_accel, 1.0)
        blends.append(tau)

    pieces: list[TrajectoryPiece] = []
    t = 0.0
    pos = points[0].copy()
    for i, (v, length) in enumerate(zip(velocities, lengths)):
        cut_in = speeds[i] * blends[i - 1] / 2.0 if i > 0 else 0.0
        cut_out = speeds[i] * blends[i] / 2.0 if i < len(blends) else 0.0
        cruise_len = length - cut_in - cut_out
        if cruise_len < 0:
            raise ValueError(f"leg {i} too short for its corner blends")
        cruise_dur = cruise_len / speeds[i]
        if cruise_dur > 0:
            pieces.append(TrajectoryPiece(t, cruise_dur, pos.copy(), v.copy(), np.zeros(3)))
            pos = pos + v * cruise_dur
            t += cruise_dur
        if i < len(blends):
            tau = blends[i]
            accel = (velocities[i + 1] - v) / tau
            pieces.append(TrajectoryPiece(t, tau, pos.copy(), v.copy(), accel))
            pos = pos + v * tau + 0.5 * accel * tau**2
            t += tau

    if t < cfg.duration_s:  # extend the final leg at constant velocity
        pieces.append(
            TrajectoryPiece(t, cfg.duration_s - t, pos.copy(), velocities[-1].copy(), np.zeros(3))
        )
    return pieces


def eval_trajectory(pieces: Sequence[TrajectoryPiece], t: np.ndarray):
    """Exact ENU position/velocity/acceleration at the given times."""
    t = np.asarray(t, dtype=float)
    starts = np.array([p.t0 for p in pieces])
    idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(pieces) - 1)
    pos = np.empty((t.size, 3))
    vel = np.empty((t.size, 3))
    acc = np.empty((t.size, 3))
    for i, piece in enumerate(pieces):
        sel = idx == i
        if not np.any(sel):
            continue
        s = (t[sel] - piece.t0)[:, None]
        pos[sel] = piece.p0 + piece.v0 * s + 0.5 * piece.accel * s**2
        vel[sel] = piece.v0 + piece.accel * s
        acc[sel] = piece.accel
    return pos, vel, acc


# ---------------------------------------------------------------------------
# Constellation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SatTrack:
    sat_id: str
    constellation: Constellation
    az0_deg: float
    az_rate_deg: float
    el_center_deg: float
    el_amp_deg: float
    el_omega: float
    el_phase: float

    def az_el_deg(self, t: float) -> tuple[float, float]:
        az = (self.az0_deg + self.az_rate_deg * t) % 360.0
        el = self.el_center_deg + self.el_amp_deg * math.sin(self.el_omega * t + self.el_phase)
        return az, el


def generate_constellation(cfg: SimConfig, rng: np.random.Generator) -> list[SatTrack]:
    """Slowly drifting az/el tracks, half GPS and half BeiDou.

    A handful of tracks ride high in the sky (the satellites that survive
    dense urban cover); the rest drift at the low and middle elevations
    where canyon walls matter.
    """
    tracks = []
    n_high = min(cfg.n_high_satellites, cfg.n_satellites)
    for i in range(cfg.n_satellites):
        constellation = Constellation.GPS if i % 2 == 0 else Constellation.BEIDOU
        prefix = "G" if constellation is Constellation.GPS else "C"
        if i < n_high:
            el_amp = float(rng.uniform(2.0, 4.0))
            el_center = float(rng.uniform(66.0, 80.0))
        else:
            el_amp = float(rng.uniform(4.0, 12.0))
            el_center = float(rng.uniform(12.0, 55.0))
            el_center = max(el_center, el_amp + 8.0)
        tracks.append(
            SatTrack(
                sat_id=f"{prefix}{i + 1:02d}",
                constellation=constellation,
                az0_deg=float(rng.uniform(0.0, 360.0)),
                az_rate_deg=float(rng.uniform(-0.03, 0.03)),
                el_center_deg=el_center,
                el_amp_deg=el_amp,
                el_omega=2.0 * math.pi / float(rng.uniform(900.0, 2400.0)),
                el_phase=float(rng.uniform(0.0, 2.0 * math.pi)),
            )
        )
    return tracks


def satellite_ecef(track: SatTrack, t: float, ref: Geodetic) -> np.ndarray:
    """ECEF position on the MEO shell along the track's az/el at ``ref``."""
    az_deg, el_deg = track.az_el_deg(t)
    az, el = math.radians(az_deg), math.radians(el_deg)
    u_enu = np.array(
        [math.sin(az) * math.cos(el), math.cos(az) * math.cos(el), math.sin(el)]
    )
    r0 = geodetic_to_ecef(ref)
    u = rotation_global_from_local(ref) @ u_enu
    ru = float(r0 @ u)
    slant = -ru + math.sqrt(ru**2 + MEO_RADIUS_M**2 - float(r0 @ r0))
    return r0 + slant * u


def azimuth_elevation(sat_pos: np.ndarray, receiver: np.ndarray) -> tuple[float, float]:
    """Azimuth/elevation (radians) of a satellite seen from an ECEF receiver."""
    geo = ecef_to_geodetic(receiver)
    enu = rotation_global_from_local(geo).T @ (sat_pos - receiver)
    rng = np.linalg.norm(enu)
    el = math.asin(enu[2] / rng)
    az = math.atan2(enu[0], enu[1]) % (2.0 * math.pi)
    return az, el


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    ref: Geodetic
    epochs: list[EpochMeasurements]
    truth_t: np.ndarray
    truth_pos: np.ndarray
    truth_vel: np.ndarray
    truth_clocks: dict
    truth_attitude: np.ndarray  # per-epoch yaw/pitch/roll
    imu_t: np.ndarray
    imu_accel: np.ndarray
    imu_attitude: np.ndarray
    constellations: tuple[Constellation, ...] = (Constellation.GPS, Constellation.BEIDOU)

    @property
    def n_epochs(self) -> int:
        return len(self.epochs)

    def nlos_fraction(self) -> float:
        total = sum(len(e.sats) for e in self.epochs)
        if total == 0:
            return 0.0
        nlos = sum(sum(1 for s in e.sats if s.nlos_truth) for e in self.epochs)
        return nlos / total

    def mean_sats_per_epoch(self) -> float:
        return float(np.mean([len(e.sats) for e in self.epochs]))

    def range_error(self, epoch_idx: int, sat: SatObservation) -> float:
        """Pseudorange error against truth geometry and clock."""
        rng = float(np.linalg.norm(sat.sat_pos - self.truth_pos[epoch_idx]))
        clock = self.truth_clocks[sat.constellation.value][epoch_idx]
        return sat.pseudorange - rng - clock


def _truncated_positive_normal(rng: np.random.Generator, mean: float, std: float) -> float:
    for _ in range(100):
        draw = rng.normal(mean, std)
        if draw >= 0.0:
            return float(draw)
    return 0.0


def _draw_nlos_bias(rng: np.random.Generator, model: GmmModel) -> float:
    """Positive bias from the full mixture: most reflections add a few
    meters, the long-tail component adds tens."""
    weights = np.array([c.weight for c in model.components])
    idx = rng.choice(len(weights), p=weights / weights.sum())
    comp = model.components[idx]
    return _truncated_positive_normal(rng, comp.mean, comp.std)


def simulate(cfg: SimConfig) -> Dataset:
    """Generate a complete dataset for the configuration."""
    rng = np.random.default_rng(cfg.seed)
    ref = cfg.ref
    rot_ref = rotation_global_from_local(ref)
    ref_ecef = geodetic_to_ecef(ref)
    pieces = build_trajectory(cfg)

    n_epochs = int(round(cfg.duration_s * cfg.gnss_rate_hz))
    epoch_t = np.arange(n_epochs) / cfg.gnss_rate_hz
    n_imu = int(round(cfg.duration_s * cfg.imu_rate_hz))
    imu_t = np.arange(1, n_imu + 1) / cfg.imu_rate_hz

    pos_e, vel_e, _ = eval_trajectory(pieces, epoch_t)
    truth_pos = ref_ecef + (rot_ref @ pos_e.T).T
    truth_vel = (rot_ref @ vel_e.T).T

    # IMU: per-sample mean specific force from exact velocity differences,
    # inverted through the true attitude and local frame at each sample
    sample_edges = np.concatenate(([0.0], imu_t))
    _, vel_edges, _ = eval_trajectory(pieces, sample_edges)
    accel_enu = np.diff(vel_edges, axis=0) * cfg.imu_rate_hz
    _, vel_mid, _ = eval_trajectory(pieces, imu_t)
    yaw_true = np.arctan2(vel_mid[:, 0], vel_mid[:, 1])

    att_noise = math.radians(cfg.attitude_noise_deg)
    imu_attitude = np.zeros((n_imu, 3))
    imu_attitude[:, 0] = yaw_true
    if att_noise > 0:
        imu_attitude += rng.normal(0.0, att_noise, size=(n_imu, 3))

    imu_accel = np.zeros((n_imu, 3))
    pos_mid, _, _ = eval_trajectory(pieces, imu_t)
    for i in range(n_imu):
        a_ecef = rot_ref @ accel_enu[i]
        geo_i = ecef_to_geodetic(ref_ecef + rot_ref @ pos_mid[i])
        r_gl = rotation_global_from_local(geo_i)
        r_lb = rotation_local_from_body(
            EulerAngles(yaw_true[i], 0.0, 0.0)
        )
        imu_accel[i] = r_lb.T @ (r_gl.T @ a_ecef) + cfg.accel_bias_true
    if cfg.accel_noise_sigma > 0:
        imu_accel += rng.normal(0.0, cfg.accel_noise_sigma, size=(n_imu, 3))

    tracks = generate_constellation(cfg, rng)
    clock_series = {
        name: np.array([model.at(t) for t in epoch_t])
        for name, model in cfg.clock_models.items()
    }

    samples_per_epoch = int(round(cfg.imu_rate_hz / cfg.gnss_rate_hz))
    epochs: list[EpochMeasurements] = []
    truth_attitude = np.zeros((n_epochs, 3))
    for k in range(n_epochs):
        t = float(epoch_t[k])
        if k == 0:
            accel_mean = np.zeros(3)
            attitude = EulerAngles(*imu_attitude[0])
        else:
            lo, hi = (k - 1) * samples_per_epoch, k * samples_per_epoch
            accel_mean = imu_accel[lo:hi].mean(axis=0)
            attitude = EulerAngles(*imu_attitude[hi - 1])
        truth_attitude[k] = [
            yaw_true[min(max(k * samples_per_epoch - 1, 0), n_imu - 1)],
            0.0,
            0.0,
        ]

        sats: list[SatObservation] = []
        for track in tracks:
            sat_pos = satellite_ecef(track, t, ref)
            az, el = azimuth_elevation(sat_pos, truth_pos[k])
            if el < HARD_HORIZON_RAD:
                continue
            mask_deg = cfg.mask_elevation_deg(math.degrees(az), t)
            el_deg = math.degrees(el)
            if el_deg < cfg.block_floor_deg(t):
                continue  # dense cover blocks everything below the floor
            if el_deg >= mask_deg:
                nlos = False
            elif el_deg >= mask_deg - cfg.nlos_depth_deg:
                # reflections flicker with receiver motion: a masked satellite
                # is only intermittently received, and then with a bias
                if rng.uniform() >= cfg.nlos_receive_prob:
                    continue
                nlos = True
            else:
                continue  # blocked outright
            rho = float(np.linalg.norm(sat_pos - truth_pos[k]))
            rho += clock_series[track.constellation.value][k]
            if cfg.los_sigma_m > 0:
                rho += rng.normal(0.0, cfg.los_sigma_m)
            snr_shift = 0.0
            if nlos:
                bias = _draw_nlos_bias(rng, cfg.nlos_model[track.constellation.value])
                rho += bias
                snr_model = cfg.snr_nlos
                # deeper reflections arrive weaker
                snr_shift = -cfg.snr_bias_slope_db_per_m * bias
            else:
                snr_model = cfg.snr_los
            snr = float(
                np.clip(rng.normal(snr_model.mean + snr_shift, snr_model.sigma), 25.0, 55.0)
            )
            sats.append(
                SatObservation(
                    sat_id=track.sat_id,
                    constellation=track.constellation,
                    sat_pos=sat_pos,
                    pseudorange=rho,
                    snr=snr,
                    elevation=el,
                    azimuth=az,
                    nlos_truth=nlos,
                )
            )

        epochs.append(
            EpochMeasurements(
                t=t,
                dt=1.0 / cfg.gnss_rate_hz,
                accel_body_mean=accel_mean,
                attitude=attitude,
                sats=sats,
            )
        )

    return Dataset(
        ref=ref,
        epochs=epochs,
        truth_t=epoch_t,
        truth_pos=truth_pos,
        truth_vel=truth_vel,
        truth_clocks=clock_series,
        truth_attitude=truth_attitude,
        imu_t=imu_t,
        imu_accel=imu_accel,
        imu_attitude=imu_attitude,
    )


def generate_lc_fixes(
    epochs: Sequence[EpochMeasurements], weighting: Optional[WeightingParams] = None
) -> None:
    """Fill per-epoch LC fixes by single-epoch weighted least squares.

    Epochs with too few satellites (or degenerate geometry) are left
    fix-unavailable. Fixes inherit whatever corruption the pseudoranges
    carry, like a real receiver's output would.
    """
    from .fgo import single_epoch_wls  # local import to avoid a cycle

    weighting = weighting or WeightingParams()
    previous: Optional[np.ndarray] = None
    for epoch in epochs:
        epoch.fix_pos = None
        epoch.fix_hdop = None
        consts = {s.constellation for s in epoch.sats}
        if len(epoch.sats) < 3 + len(consts) + 1:
            continue
        try:
            pos, _ = single_epoch_wls(epoch.sats, weighting, initial=previous)
            hdop = compute_hdop(epoch.sats, pos)
        except (GeometryError, ValueError):
            continue
        epoch.fix_pos = pos
        epoch.fix_hdop = hdop
        previous = pos


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def _offset_waypoint(ref: Geodetic, east: float, north: float, speed: float) -> Waypoint:
    geo = ecef_to_geodetic(enu_to_ecef(ref, np.array([east, north, 0.0])))
    return Waypoint(geo=geo, speed=speed)


def default_canyon_config(seed: int = 99) -> SimConfig:
    """300-epoch urban canyon: wide masking walls, six deep-cover stretches.

    Four high tracks survive the deep cover (enough for the tightly coupled
    estimators, one short of a loosely coupled fix), mid/low tracks carry the
    flickering NLOS load, and roughly forty percent of the run sits under
    dense cover.
    """
    ref = Geodetic.from_degrees(22.32, 114.17, 5.0)
    waypoints = [
        Waypoint(ref, 8.0),
        _offset_waypoint(ref, 0.0, 900.0, 8.0),
        _offset_waypoint(ref, 700.0, 900.0, 8.0),
        _offset_waypoint(ref, 700.0, 1800.0, 8.0),
    ]
    return SimConfig(
        waypoints=waypoints,
        duration_s=300.0,
        los_sigma_m=2.0,
        canyon_sectors=[
            MaskSector(25.0, 155.0, 62.0),
            MaskSector(205.0, 335.0, 62.0),
        ],
        open_sky_min_elevation_deg=10.0,
        nlos_depth_deg=60.0,
        nlos_receive_prob=0.6,
        snr_bias_slope_db_per_m=0.5,
        deep_intervals=[
            DeepInterval(40.0, 60.0, 60.0),
            DeepInterval(85.0, 105.0, 60.0),
            DeepInterval(130.0, 150.0, 60.0),
            DeepInterval(175.0, 195.0, 60.0),
            DeepInterval(220.0, 240.0, 60.0),
            DeepInterval(265.0, 285.0, 60.0),
        ],
        accel_bias_true=np.array([0.012, -0.008, 0.006]),
        accel_noise_sigma=0.15,
        attitude_noise_deg=0.2,
        clock_models={
            "GPS": ClockModel(120.0, 0.6),
            "BeiDou": ClockModel(95.0, -0.4),
        },
        snr_nlos=SnrModel(36.0, 2.5),
        n_satellites=14,
        n_high_satellites=4,
        seed=seed,
    )


def noise_free_config(seed: int = 1, duration_s: float = 60.0) -> SimConfig:
    """Straight constant-velocity run with every error source disabled."""
    ref = Geodetic.from_degrees(22.32, 114.17, 5.0)
    waypoints = [Waypoint(ref, 8.0), _offset_waypoint(ref, 300.0, 400.0, 8.0)]
    return SimConfig(
        waypoints=waypoints,
        duration_s=duration_s,
        los_sigma_m=0.0,
        canyon_sectors=[],
        open_sky_min_elevation_deg=10.0,
        nlos_depth_deg=0.0,
        accel_bias_true=np.zeros(3),
        accel_noise_sigma=0.0,
        attitude_noise_deg=0.0,
        clock_models={
            "GPS": ClockModel(120.0, 0.0),
            "BeiDou": ClockModel(95.0, 0.0),
        },
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Config serialization
# ---------------------------------------------------------------------------


def config_to_dict(cfg: SimConfig) -> dict:
    return {
        "duration_s": cfg.duration_s,
        "imu_rate_hz": cfg.imu_rate_hz,
        "gnss_rate_hz": cfg.gnss_rate_hz,
        "waypoints": [
            {
                "lat_deg": math.degrees(w.geo.lat),
                "lon_deg": math.degrees(w.geo.lon),
                "height_m": w.geo.height,
                "speed_mps": w.speed,
            }
            for w in cfg.waypoints
        ],
        "los_sigma_m": cfg.los_sigma_m,
        "nlos_model": {
            name: [[c.weight, c.mean, c.std] for c in model.components]
            for name, model in cfg.nlos_model.items()
        },
        "canyon_sectors": [
            [s.az_min_deg, s.az_max_deg, s.min_elevation_deg] for s in cfg.canyon_sectors
        ],
        "open_sky_min_elevation_deg": cfg.open_sky_min_elevation_deg,
        "nlos_depth_deg": cfg.nlos_depth_deg,
        "deep_intervals": [[d.t_start, d.t_end, d.block_floor_deg] for d in cfg.deep_intervals],
        "accel_bias_true": list(map(float, cfg.accel_bias_true)),
        "accel_noise_sigma": cfg.accel_noise_sigma,
        "attitude_noise_deg": cfg.attitude_noise_deg,
        "clock_models": {
            name: {"bias_m": m.bias_m, "drift_mps": m.drift_mps}
            for name, m in cfg.clock_models.items()
        },
        "snr_los": {"mean": cfg.snr_los.mean, "sigma": cfg.snr_los.sigma},
        "snr_nlos": {"mean": cfg.snr_nlos.mean, "sigma": cfg.snr_nlos.sigma},
        "n_satellites": cfg.n_satellites,
        "n_high_satellites": cfg.n_high_satellites,
        "snr_bias_slope_db_per_m": cfg.snr_bias_slope_db_per_m,
        "max_accel": cfg.max_accel,
        "seed": cfg.seed,
    }


def config_from_dict(data: dict) -> SimConfig:
    waypoints = [
        Waypoint(
            Geodetic.from_degrees(w["lat_deg"], w["lon_deg"], w.get("height_m", 0.0)),
            w["speed_mps"],
        )
        for w in data["waypoints"]
    ]
    nlos = {
        name: GmmModel(tuple(GmmComponent(*c) for c in comps))
        for name, comps in data.get("nlos_model", {}).items()
    } or _default_nlos_models()
    return SimConfig(
        waypoints=waypoints,
        duration_s=data.get("duration_s", 300.0),
        imu_rate_hz=data.get("imu_rate_hz", 100.0),
        gnss_rate_hz=data.get("gnss_rate_hz", 1.0),
        los_sigma_m=data.get("los_sigma_m", 2.0),
        nlos_model=nlos,
        canyon_sectors=[MaskSector(*s) for s in data.get("canyon_sectors", [])],
        open_sky_min_elevation_deg=data.get("open_sky_min_elevation_deg", 10.0),
        nlos_depth_deg=data.get("nlos_depth_deg", 30.0),
        deep_intervals=[DeepInterval(*d) for d in data.get("deep_intervals", [])],
        accel_bias_true=np.array(data.get("accel_bias_true", [0.0, 0.0, 0.0])),
        accel_noise_sigma=data.get("accel_noise_sigma", 0.0),
        attitude_noise_deg=data.get("attitude_noise_deg", 0.0),
        clock_models={
            name: ClockModel(m["bias_m"], m["drift_mps"])
            for name, m in data.get(
                "clock_models",
                {"GPS": {"bias_m": 120.0, "drift_mps": 0.0}, "BeiDou": {"bias_m": 95.0, "drift_mps": 0.0}},
            ).items()
        },
        snr_los=SnrModel(**data.get("snr_los", {"mean": 48.0, "sigma": 2.0})),
        snr_nlos=SnrModel(**data.get("snr_nlos", {"mean": 41.0, "sigma": 2.5})),
        n_satellites=data.get("n_satellites", 14),
        n_high_satellites=data.get("n_high_satellites", 5),
        snr_bias_slope_db_per_m=data.get("snr_bias_slope_db_per_m", 0.0),
        max_accel=data.get("max_accel", 1.5),
        seed=data.get("seed", 0),
    )


def load_config(path: Path) -> SimConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# CSV persistence (truth.csv, imu.csv, gnss.csv)
# ---------------------------------------------------------------------------


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(
                ",".join(
                    CSV_FLOAT % v if isinstance(v, float) else str(v) for v in row
                )
                + "\n"
            )


def write_dataset(ds: Dataset, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clock_names = sorted(ds.truth_clocks)
    _write_csv(
        out_dir / "truth.csv",
        ["t", "x", "y", "z", "vx", "vy", "vz"]
        + [f"clk_{n}" for n in clock_names]
        + ["yaw", "pitch", "roll"],
        (
            [float(ds.truth_t[k])]
            + [float(v) for v in ds.truth_pos[k]]
            + [float(v) for v in ds.truth_vel[k]]
            + [float(ds.truth_clocks[n][k]) for n in clock_names]
            + [float(v) for v in ds.truth_attitude[k]]
            for k in range(ds.n_epochs)
        ),
    )
    _write_csv(
        out_dir / "imu.csv",
        ["t", "fx", "fy", "fz", "yaw", "pitch", "roll"],
        (
            [float(ds.imu_t[i])]
            + [float(v) for v in ds.imu_accel[i]]
            + [float(v) for v in ds.imu_attitude[i]]
            for i in range(ds.imu_t.size)
        ),
    )
    _write_csv(
        out_dir / "gnss.csv",
        [
            "t",
            "sat_id",
            "constellation",
            "sat_x",
            "sat_y",
            "sat_z",
            "pseudorange_m",
            "snr_dbhz",
            "elevation_rad",
            "azimuth_rad",
            "nlos",
            "range_error_m",
        ],
        (
            [
                float(e.t),
                s.sat_id,
                s.constellation.value,
                float(s.sat_pos[0]),
                float(s.sat_pos[1]),
                float(s.sat_pos[2]),
                float(s.pseudorange),
                float(s.snr),
                float(s.elevation),
                float(s.azimuth),
                int(bool(s.nlos_truth)),
                float(ds.range_error(k, s)),
            ]
            for k, e in enumerate(ds.epochs)
            for s in e.sats
        ),
    )


def read_dataset(in_dir: Path) -> Dataset:
    """Rebuild a Dataset from the three CSV files."""
    in_dir = Path(in_dir)
    truth = np.genfromtxt(in_dir / "truth.csv", delimiter=",", names=True)
    truth = np.atleast_1d(truth)
    clock_names = [n[4:] for n in truth.dtype.names if n.startswith("clk_")]
    truth_t = truth["t"]
    truth_pos = np.column_stack([truth["x"], truth["y"], truth["z"]])
    truth_vel = np.column_stack([truth["vx"], truth["vy"], truth["vz"]])
    truth_clocks = {n: truth[f"clk_{n}"] for n in clock_names}
    truth_attitude = np.column_stack([truth["yaw"], truth["pitch"], truth["roll"]])

    imu = np.atleast_1d(np.genfromtxt(in_dir / "imu.csv", delimiter=",", names=True))
    imu_t = imu["t"]
    imu_accel = np.column_stack([imu["fx"], imu["fy"], imu["fz"]])
    imu_attitude = np.column_stack([imu["yaw"], imu["pitch"], imu["roll"]])

    epochs: list[EpochMeasurements] = []
    sats_by_epoch: dict[float, list[SatObservation]] = {float(t): [] for t in truth_t}
    with open(in_dir / "gnss.csv") as fh:
        header = fh.readline().strip().split(",")
        col = {name: i for i, name in enumerate(header)}
        for line in fh:
            parts = line.strip().split(",")
            t = float(parts[col["t"]])
            sats_by_epoch.setdefault(t, []).append(
                SatObservation(
                    sat_id=parts[col["sat_id"]],
                    constellation=Constellation.from_name(parts[col["constellation"]]),
                    sat_pos=np.array(
                        [
                            float(parts[col["sat_x"]]),
                            float(parts[col["sat_y"]]),
                            float(parts[col["sat_z"]]),
                        ]
                    ),
                    pseudorange=float(parts[col["pseudorange_m"]]),
                    snr=float(parts[col["snr_dbhz"]]),
                    elevation=float(parts[col["elevation_rad"]]),
                    azimuth=float(parts[col["azimuth_rad"]]),
                    nlos_truth=bool(int(parts[col["nlos"]])),
                )
            )

    dt = float(truth_t[1] - truth_t[0]) if truth_t.size > 1 else 1.0
    rate = imu_t.size / (truth_t.size * dt) if truth_t.size else 100.0
    samples_per_epoch = int(round(rate * dt))
    for k, t in enumerate(truth_t):
        if k == 0:
            accel_mean = np.zeros(3)
            attitude = EulerAngles(*imu_attitude[0])
        else:
            lo, hi = (k - 1) * samples_per_epoch, k * samples_per_epoch
            accel_mean = imu_accel[lo:hi].mean(axis=0)
            attitude = EulerAngles(*imu_attitude[hi - 1])
        epochs.append(
            EpochMeasurements(
                t=float(t),
                dt=dt,
                accel_body_mean=accel_mean,
                attitude=attitude,
                sats=sats_by_epoch.get(float(t), []),
            )
        )

    ref = ecef_to_geodetic(truth_pos[0])
    return Dataset(
        ref=ref,
        epochs=epochs,
        truth_t=truth_t,
        truth_pos=truth_pos,
        truth_vel=truth_vel,
        truth_clocks=truth_clocks,
        truth_attitude=truth_attitude,
        imu_t=imu_t,
        imu_accel=imu_accel,
        imu_attitude=imu_attitude,
    )
