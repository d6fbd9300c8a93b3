"""Sliding-window factor graphs for LC and TC GNSS/INS integration.

Each epoch contributes a state slot; consecutive slots are tied by a
constant-velocity motion factor (position and accelerometer bias), an INS
velocity factor and, for tightly coupled graphs, a clock random-walk factor.
GNSS information enters either as one position-fix factor per epoch (LC) or
one pseudorange factor per satellite (TC). The oldest in-window state is
anchored with a prior at its previously optimized value; window size 1 keeps
the current and last epochs only, while batch mode keeps everything.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .frames import body_accel_to_ecef, ecef_to_geodetic
from .noise_models import (
    GeometryError,
    SatObservation,
    WeightingParams,
    compute_hdop,
    ins_cov,
    lc_fix_covariance,
    motion_model_cov,
    tc_covariance,
)
from .nls_solver import (
    LmConfig,
    NlsProblem,
    ResidualBlock,
    SolverError,
    solve_lm,
    sqrt_info_from_cov_diag,
)
from .types import BIAS, POS, VEL, Constellation, EpochMeasurements, StateLayout

BATCH = None  # window_size value meaning "keep all epochs"


@dataclass
class FgoConfig:
    mode: str = "tc"  # "lc" or "tc"
    window_size: Optional[int] = 30  # epochs; None (BATCH) keeps everything
    weighting: WeightingParams = field(default_factory=WeightingParams)
    motion_cov: np.ndarray = field(default_factory=motion_model_cov)
    ins_cov_diag: np.ndarray = field(default_factory=ins_cov)
    clock_rw_sigma: float = 5.0
    prior_pos_var: float = 1.0
    prior_vel_var: float = 0.1
    prior_bias_var: float = 1e-4
    prior_clock_var: float = 25.0
    initial_pos_var: float = 100.0
    initial_vel_var: float = 10.0
    initial_bias_var: float = 1e-2
    initial_clock_var: float = 100.0**2
    cov_scale: float = 1.0
    lm: LmConfig = field(default_factory=LmConfig)

    def __post_init__(self) -> None:
        if self.mode not in ("lc", "tc"):
            raise ValueError(f"mode must be 'lc' or 'tc', got {self.mode!r}")
        if self.window_size is not None and self.window_size < 1:
            raise ValueError("window_size must be >= 1 (or None for batch)")

    def prior_cov(self, layout: StateLayout) -> np.ndarray:
        p = np.empty(layout.dim)
        p[POS] = self.prior_pos_var
        p[VEL] = self.prior_vel_var
        p[BIAS] = self.prior_bias_var
        if layout.has_clock:
            p[layout.clock_slice()] = self.prior_clock_var
        return p

    def initial_prior_cov(self, layout: StateLayout) -> np.ndarray:
        """Wide prior for the trajectory's first state, before any slide."""
        p = np.empty(layout.dim)
        p[POS] = self.initial_pos_var
        p[VEL] = self.initial_vel_var
        p[BIAS] = self.initial_bias_var
        if layout.has_clock:
            p[layout.clock_slice()] = self.initial_clock_var
        return p


def motion_factor(
    idx_prev: int, idx_cur: int, dt: float, cov6: np.ndarray, layout: StateLayout
) -> ResidualBlock:
    """Constant-velocity motion model over position and accelerometer bias."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = layout.dim
    j_prev = np.zeros((6, n))
    j_prev[0:3, POS] = -np.eye(3)
    j_prev[0:3, VEL] = -dt * np.eye(3)
    j_prev[3:6, BIAS] = -np.eye(3)
    j_cur = np.zeros((6, n))
    j_cur[0:3, POS] = np.eye(3)
    j_cur[3:6, BIAS] = np.eye(3)

    def residual(xp, xc):
        return np.concatenate(
            (xc[POS] - xp[POS] - xp[VEL] * dt, xc[BIAS] - xp[BIAS])
        )

    return ResidualBlock(
        state_indices=(idx_prev, idx_cur),
        dim=6,
        fn=residual,
        jac=lambda xp, xc: [j_prev, j_cur],
        sqrt_info=sqrt_info_from_cov_diag(cov6),
        label="motion",
    )


def ins_factor(
    idx_prev: int,
    idx_cur: int,
    accel_ecef: np.ndarray,
    dt: float,
    cov3: np.ndarray,
    layout: StateLayout,
) -> ResidualBlock:
    """Velocity integration of the epoch's ECEF specific force."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    accel_ecef = np.asarray(accel_ecef, dtype=float)
    n = layout.dim
    j_prev = np.zeros((3, n))
    j_prev[:, VEL] = -np.eye(3)
    j_cur = np.zeros((3, n))
    j_cur[:, VEL] = np.eye(3)

    def residual(xp, xc):
        return xc[VEL] - xp[VEL] - accel_ecef * dt

    return ResidualBlock(
        state_indices=(idx_prev, idx_cur),
        dim=3,
        fn=residual,
        jac=lambda xp, xc: [j_prev, j_cur],
        sqrt_info=sqrt_info_from_cov_diag(cov3),
        label="ins",
    )


def gnss_fix_factor(
    idx: int, fix: np.ndarray, cov3: np.ndarray, layout: StateLayout
) -> ResidualBlock:
    """Loosely coupled position-fix factor."""
    fix = np.asarray(fix, dtype=float)
    j = np.zeros((3, layout.dim))
    j[:, POS] = -np.eye(3)
    return ResidualBlock(
        state_indices=(idx,),
        dim=3,
        fn=lambda x: fix - x[POS],
        jac=lambda x: [j],
        sqrt_info=sqrt_info_from_cov_diag(cov3),
        label="gnss_fix",
    )


def pseudorange_factor(
    idx: int, sat: SatObservation, sigma2: float, layout: StateLayout
) -> ResidualBlock:
    """Tightly coupled pseudorange factor for one satellite."""
    clock_col = layout.clock_index(sat.constellation)
    sat_pos = sat.sat_pos
    rho = sat.pseudorange

    def residual(x):
        los = sat_pos - x[0:3]
        rng = math.sqrt(los @ los)
        if rng == 0.0:
            raise GeometryError(f"satellite {sat.sat_id} coincides with receiver")
        return np.array([rho - rng - x[clock_col]])

    def jacobian(x):
        los = sat_pos - x[0:3]
        rng = math.sqrt(los @ los)
        j = np.zeros((1, layout.dim))
        j[0, 0:3] = los / rng
        j[0, clock_col] = -1.0
        return [j]

    return ResidualBlock(
        state_indices=(idx,),
        dim=1,
        fn=residual,
        jac=jacobian,
        sqrt_info=sqrt_info_from_cov_diag([sigma2]),
        label=f"pseudorange:{sat.sat_id}",
    )


def prior_factor(idx: int, value: np.ndarray, cov: np.ndarray, layout: StateLayout) -> ResidualBlock:
    """Anchor a state at a fixed value."""
    value = np.asarray(value, dtype=float).copy()
    eye = np.eye(layout.dim)
    return ResidualBlock(
        state_indices=(idx,),
        dim=layout.dim,
        fn=lambda x: x - value,
        jac=lambda x: [eye],
        sqrt_info=sqrt_info_from_cov_diag(cov),
        label="prior",
    )


def clock_walk_factor(
    idx_prev: int, idx_cur: int, sigma: float, layout: StateLayout
) -> ResidualBlock:
    """Random-walk link between consecutive clock biases, one per constellation."""
    sl = layout.clock_slice()
    n_clock = layout.dim - 9
    j_prev = np.zeros((n_clock, layout.dim))
    j_prev[:, sl] = -np.eye(n_clock)
    j_cur = np.zeros((n_clock, layout.dim))
    j_cur[:, sl] = np.eye(n_clock)
    return ResidualBlock(
        state_indices=(idx_prev, idx_cur),
        dim=n_clock,
        fn=lambda xp, xc: xc[sl] - xp[sl],
        jac=lambda xp, xc: [j_prev, j_cur],
        sqrt_info=sqrt_info_from_cov_diag(np.full(n_clock, sigma**2)),
        label="clock_walk",
    )


@dataclass
class EpochEntry:
    """Internal per-epoch record kept by the estimator."""

    meas: EpochMeasurements
    state: np.ndarray
    accel_ecef: np.ndarray
    fix_cov: Optional[np.ndarray] = None
    pr_sigma2: Optional[np.ndarray] = None


def build_window(
    entries: Sequence[EpochEntry], cfg: FgoConfig, layout: StateLayout
) -> NlsProblem:
    """Assemble the NLS problem over the newest epochs.

    A finite window of size W keeps the newest W + 1 states (the current
    epoch plus W historical ones, so window size 1 optimizes the current and
    last epochs jointly); batch keeps every epoch. Each in-graph epoch
    contributes its GNSS measurements and the oldest state carries a prior
    at its stored estimate.
    """
    if not entries:
        raise ValueError("empty epoch history")
    n_avail = len(entries)
    if cfg.window_size is None:
        n_states = n_avail
    else:
        n_states = min(cfg.window_size + 1, n_avail)
    base = n_avail - n_states
    scale = cfg.cov_scale

    # the very first trajectory state carries a wide prior; once the window
    # has slid past it, the anchor re-pins the oldest state at its previously
    # optimized value with the tight sliding prior
    anchor_cov = cfg.initial_prior_cov(layout) if base == 0 else cfg.prior_cov(layout)
    blocks: list[ResidualBlock] = [
        prior_factor(0, entries[base].state, anchor_cov * scale, layout)
    ]
    for i in range(1, n_states):
        entry = entries[base + i]
        dt = entry.meas.dt
        blocks.append(motion_factor(i - 1, i, dt, cfg.motion_cov * scale, layout))
        blocks.append(
            ins_factor(i - 1, i, entry.accel_ecef, dt, cfg.ins_cov_diag * scale, layout)
        )
        if layout.has_clock:
            blocks.append(
                clock_walk_factor(i - 1, i, cfg.clock_rw_sigma * np.sqrt(scale), layout)
            )
    for i in range(n_states):
        entry = entries[base + i]
        if cfg.mode == "lc":
            if entry.meas.fix_available and entry.fix_cov is not None:
                blocks.append(
                    gnss_fix_factor(i, entry.meas.fix_pos, entry.fix_cov * scale, layout)
                )
        else:
            if entry.pr_sigma2 is not None:
                for sat, s2 in zip(entry.meas.sats, entry.pr_sigma2):
                    blocks.append(pseudorange_factor(i, sat, s2 * scale, layout))

    initial = np.concatenate([entries[base + i].state for i in range(n_states)])
    return NlsProblem(
        state_dims=[layout.dim] * n_states, blocks=blocks, initial_values=initial
    )


def single_epoch_wls(
    sats: Sequence[SatObservation],
    weighting: WeightingParams,
    initial: Optional[np.ndarray] = None,
    lm: Optional[LmConfig] = None,
) -> tuple[np.ndarray, dict[Constellation, float]]:
    """Weighted least-squares position/clock solve from one epoch of pseudoranges.

    Returns the ECEF position and one clock bias per constellation present.
    Raises GeometryError when there are too few satellites for the unknowns.
    """
    consts: list[Constellation] = []
    for s in sats:
        if s.constellation not in consts:
            consts.append(s.constellation)
    n_unknowns = 3 + len(consts)
    if len(sats) < n_unknowns:
        raise GeometryError(
            f"{len(sats)} satellites cannot determine {n_unknowns} unknowns"
        )
    sigma2 = tc_covariance(sats, weighting)

    def make_block(sat: SatObservation, s2: float) -> ResidualBlock:
        col = 3 + consts.index(sat.constellation)

        def residual(x):
            rng = np.linalg.norm(sat.sat_pos - x[0:3])
            if rng == 0.0:
                raise GeometryError("satellite coincides with receiver")
            return np.array([sat.pseudorange - rng - x[col]])

        def jacobian(x):
            los = sat.sat_pos - x[0:3]
            rng = np.linalg.norm(los)
            j = np.zeros((1, n_unknowns))
            j[0, 0:3] = los / rng
            j[0, col] = -1.0
            return [j]

        return ResidualBlock(
            state_indices=(0,),
            dim=1,
            fn=residual,
            jac=jacobian,
            sqrt_info=sqrt_info_from_cov_diag([s2]),
            label=f"wls:{sat.sat_id}",
        )

    x0 = np.zeros(n_unknowns)
    if initial is not None:
        x0[0:3] = np.asarray(initial, dtype=float)
    problem = NlsProblem(
        state_dims=[n_unknowns],
        blocks=[make_block(s, s2) for s, s2 in zip(sats, sigma2)],
        initial_values=x0,
    )
    report = solve_lm(problem, lm or LmConfig())
    if not report.converged:
        raise GeometryError(f"single-epoch solve did not converge: {report.message}")
    pos = report.values[0:3].copy()
    clocks = {c: float(report.values[3 + i]) for i, c in enumerate(consts)}
    return pos, clocks


@dataclass
class FgoStepResult:
    state: np.ndarray
    solve_time: float
    iterations: int
    cost: float
    converged: bool


class FgoEstimator:
    """Sliding-window estimator; feed epochs in time order via :meth:`step`."""

    def __init__(self, cfg: FgoConfig, layout: StateLayout):
        if cfg.mode == "tc" and not layout.has_clock:
            raise ValueError("tightly coupled mode needs clock states in the layout")
        self.cfg = cfg
        self.layout = layout
        self.entries: list[EpochEntry] = []

    def _measurement_covs(self, meas: EpochMeasurements, state_guess: np.ndarray):
        fix_cov = None
        pr_sigma2 = None
        if self.cfg.mode == "lc" and meas.fix_available:
            hdop = meas.fix_hdop
            if hdop is None:
                hdop = compute_hdop(meas.sats, state_guess[POS])
            fix_cov = lc_fix_covariance(hdop, self.cfg.weighting.s_user)
        if self.cfg.mode == "tc" and meas.sats:
            pr_sigma2 = tc_covariance(meas.sats, self.cfg.weighting)
        return fix_cov, pr_sigma2

    def _position_measurement(
        self, meas: EpochMeasurements, prev_state: np.ndarray
    ) -> Optional[np.ndarray]:
        if self.cfg.mode == "lc":
            return np.asarray(meas.fix_pos, dtype=float) if meas.fix_available else None
        if len(meas.sats) >= 5:
            try:
                pos, _ = single_epoch_wls(
                    meas.sats, self.cfg.weighting, initial=prev_state[POS]
                )
                return pos
            except GeometryError:
                return None
        return None

    def _initialize(self, meas: EpochMeasurements) -> EpochEntry:
        state = self.layout.zeros()
        if self.cfg.mode == "lc" and meas.fix_available:
            state[POS] = meas.fix_pos
        elif meas.sats:
            pos, clocks = single_epoch_wls(meas.sats, self.cfg.weighting)
            state[POS] = pos
            if self.layout.has_clock:
                for c, value in clocks.items():
                    if c in self.layout.constellations:
                        state[self.layout.clock_index(c)] = value
        else:
            raise GeometryError("cannot initialize: no fix and no satellites")
        fix_cov, pr_sigma2 = self._measurement_covs(meas, state)
        return EpochEntry(meas, state, np.zeros(3), fix_cov, pr_sigma2)

    def step(self, meas: EpochMeasurements) -> FgoStepResult:
        t0 = time.perf_counter()
        if not self.entries:
            entry = self._initialize(meas)
            self.entries.append(entry)
            return FgoStepResult(
                entry.state.copy(), time.perf_counter() - t0, 0, 0.0, True
            )

        prev = self.entries[-1]
        if meas.t <= prev.meas.t:
            raise ValueError("epochs must arrive in strictly increasing time order")
        geo = ecef_to_geodetic(prev.state[POS])
        accel_ecef = body_accel_to_ecef(
            meas.accel_body_mean, prev.state[BIAS], meas.attitude, geo
        )
        state = prev.state.copy()
        state[POS] = prev.state[POS] + prev.state[VEL] * meas.dt
        state[VEL] = prev.state[VEL] + accel_ecef * meas.dt
        if len(self.entries) == 1:
            # two-point velocity seed: difference the first two position
            # solutions. Updating the stored first state matters because the
            # anchor prior pins its value, which otherwise stays at zero.
            seed = self._position_measurement(meas, prev.state)
            if seed is not None:
                vel_seed = (seed - prev.state[POS]) / meas.dt
                prev.state[VEL] = vel_seed.copy()
                state[VEL] = vel_seed
                state[POS] = seed
        fix_cov, pr_sigma2 = self._measurement_covs(meas, state)
        self.entries.append(EpochEntry(meas, state, accel_ecef, fix_cov, pr_sigma2))

        problem = build_window(self.entries, self.cfg, self.layout)
        try:
            report = solve_lm(problem, self.cfg.lm)
        except SolverError as exc:
            raise SolverError(f"epoch {len(self.entries) - 1} (t={meas.t}): {exc}") from exc
        solution = problem.split(report.values)
        n_states = len(solution)
        for i in range(n_states):
            self.entries[len(self.entries) - n_states + i].state = solution[i].copy()
        return FgoStepResult(
            self.entries[-1].state.copy(),
            time.perf_counter() - t0,
            report.iterations,
            report.cost,
            report.converged,
        )

    @property
    def current_state(self) -> np.ndarray:
        if not self.entries:
            raise ValueError("estimator not initialized")
        return self.entries[-1].state.copy()


def replace_window(cfg: FgoConfig, window_size: Optional[int]) -> FgoConfig:
    """Copy of ``cfg`` with a different window size."""
    return replace(cfg, window_size=window_size)
