"""Numerical studies: finite burn versus impulse, and burn-time observability maps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .constants import MU_EARTH, R_EARTH
from .dynamics import (
    ForceModelConfig,
    ImpulsiveManeuver,
    InertialState,
    ManeuverPolicy,
    Trajectory,
    propagate,
    vvlh_rotation,
)
from .estimation import EstimationError, PositionMeasurements, estimate_thrust

DIRECTIONS = {
    "in-track": np.array([1.0, 0.0, 0.0]),
    "normal": np.array([0.0, 1.0, 0.0]),
    "radial": np.array([0.0, 0.0, 1.0]),
}


def direction_vector(direction: Union[str, Sequence[float]]) -> np.ndarray:
    if isinstance(direction, str):
        try:
            return DIRECTIONS[direction].copy()
        except KeyError:
            raise ValueError(f"unknown direction {direction!r}; expected one of {sorted(DIRECTIONS)}") from None
    v = np.asarray(direction, dtype=float).reshape(3)
    return v / np.linalg.norm(v)


def circular_state(altitude: float = 500e3, mu: float = MU_EARTH, epoch: float = 0.0) -> InertialState:
    """Equatorial circular orbit; under a central force the plane is immaterial."""
    a = R_EARTH + altitude
    return InertialState(epoch, np.array([a, 0.0, 0.0]), np.array([0.0, math.sqrt(mu / a), 0.0]))


@dataclass
class DivergenceTable:
    direction: str
    accel: float
    durations: np.ndarray
    mean_difference: np.ndarray  # [m]
    max_difference: np.ndarray  # [m]

    def rows(self):
        return list(zip(self.durations, self.mean_difference, self.max_difference))


def burn_vs_impulse(
    u: np.ndarray,
    duration: float,
    horizon: float = 86400.0,
    cadence: float = 60.0,
    t_b: float = 0.0,
    altitude: float = 500e3,
    cfg: Optional[ForceModelConfig] = None,
) -> np.ndarray:
    """3-D separation between a finite burn and its midpoint-impulse twin on the sampling grid.

    The impulse has magnitude duration*|u| along the thrust direction rotated
    by the coasting orbit's local frame at the burn midpoint.
    """
    cfg = cfg or ForceModelConfig.two_body()
    start = circular_state(altitude, cfg.mu)
    grid = np.arange(0.0, horizon + 0.5 * cadence, cadence)
    t_m = t_b + 0.5 * duration
    coast_mid = propagate(start, cfg, t_m)
    dv = duration * (vvlh_rotation(coast_mid) @ u)
    burn = Trajectory(start, cfg, ManeuverPolicy(t_b, t_b + duration, u))
    twin = Trajectory(start, cfg, impulse=ImpulsiveManeuver(t_m, dv))
    return np.linalg.norm(burn.states_at(grid)[:, :3] - twin.states_at(grid)[:, :3], axis=1)


def divergence_study(
    direction: Union[str, Sequence[float]] = "in-track",
    accel: float = 1e-3,
    durations: Sequence[float] = (300.0, 600.0, 1200.0, 1800.0, 2400.0),
    horizon: float = 86400.0,
    cadence: float = 60.0,
    altitude: float = 500e3,
) -> DivergenceTable:
    """Average and peak separation over the horizon for each burn duration (two-body)."""
    u = accel * direction_vector(direction)
    means, maxes = [], []
    for dur in durations:
        d = burn_vs_impulse(u, float(dur), horizon, cadence, altitude=altitude)
        means.append(d.mean())
        maxes.append(d.max())
    name = direction if isinstance(direction, str) else "custom"
    return DivergenceTable(name, accel, np.asarray(durations, float), np.array(means), np.array(maxes))


def write_divergence_csv(path, tables: Sequence[DivergenceTable]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["direction", "accel_mps2", "duration_s", "mean_diff_m", "max_diff_m"])
        for tab in tables:
            for dur, mean, mx in tab.rows():
                w.writerow([tab.direction, f"{tab.accel:.6g}", f"{dur:.1f}", f"{mean:.6f}", f"{mx:.6f}"])


# ---------------------------------------------------------------------------
# observability maps


@dataclass
class ObservabilityGrid:
    tb_axis: np.ndarray
    tf_axis: np.ndarray
    rms: np.ndarray  # (len(tb_axis), len(tf_axis)) [m]; NaN where t_b >= t_f
    truth: tuple[float, float]
    converged: np.ndarray = field(default=None)

    @property
    def valid(self) -> np.ndarray:
        return self.tb_axis[:, None] < self.tf_axis[None, :]

    def truth_index(self) -> tuple[int, int]:
        i = int(np.argmin(np.abs(self.tb_axis - self.truth[0])))
        j = int(np.argmin(np.abs(self.tf_axis - self.truth[1])))
        return i, j

    def global_minimum(self) -> tuple[int, int]:
        flat = np.where(self.valid, self.rms, np.inf)
        i, j = np.unravel_index(int(np.argmin(flat)), flat.shape)
        return int(i), int(j)

    def local_minima(self) -> list[tuple[int, int, float]]:
        """Cells no larger than any valid 8-neighbour."""
        R = np.where(self.valid & np.isfinite(self.rms), self.rms, np.inf)
        out = []
        ni, nj = R.shape
        for i in range(ni):
            for j in range(nj):
                v = R[i, j]
                if not np.isfinite(v):
                    continue
                nb = R[max(i - 1, 0) : i + 2, max(j - 1, 0) : j + 2]
                if v <= nb.min():
                    out.append((i, j, float(v)))
        return out

    def to_csv(self, path) -> None:
        t_b0, t_f0 = self.truth
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_b_offset_s", "t_f_offset_s", "rms_m"])
            for i, tb in enumerate(self.tb_axis):
                for j, tf in enumerate(self.tf_axis):
                    if tb < tf:
                        w.writerow([f"{tb - t_b0:.1f}", f"{tf - t_f0:.1f}", f"{self.rms[i, j]:.9g}"])


def observability_map(
    direction: Union[str, Sequence[float]] = "normal",
    accel: float = 5e-3,
    t_b: float = 12 * 3600.0,
    duration: float = 1200.0,
    span: tuple[float, float] = (24 * 3600.0, 48 * 3600.0),
    cadence: float = 60.0,
    step: float = 120.0,
    half_width: float = 3600.0,
    altitude: float = 500e3,
) -> ObservabilityGrid:
    """Residual RMS of virtual position fits over a grid of burn start/end guesses.

    Both axes are centred on the true start and end and extend
    ``half_width`` seconds either side in steps of ``step``.
    """
    cfg = ForceModelConfig.two_body()
    start = circular_state(altitude, cfg.mu)
    u = accel * direction_vector(direction)
    t_f = t_b + duration
    truth = Trajectory(start, cfg, ManeuverPolicy(t_b, t_f, u))
    epochs = np.arange(span[0], span[1] + 0.5 * cadence, cadence)
    meas = PositionMeasurements(epochs, truth.states_at(epochs)[:, :3])
    k = int(round(half_width / step))
    offsets = step * np.arange(-k, k + 1)
    tb_axis, tf_axis = t_b + offsets, t_f + offsets
    rms = np.full((len(tb_axis), len(tf_axis)), np.nan)
    conv = np.zeros_like(rms, dtype=bool)
    coast = Trajectory(start, cfg)
    for i, tb in enumerate(tb_axis):
        if tb < start.epoch:
            continue
        for j, tf in enumerate(tf_axis):
            if tb >= tf or tf > epochs[0]:
                continue
            try:
                est = estimate_thrust(coast, float(tb), float(tf), meas, cfg)
            except EstimationError:
                continue
            rms[i, j] = est.J
            conv[i, j] = est.converged
    return ObservabilityGrid(tb_axis, tf_axis, rms, (t_b, t_f), conv)
