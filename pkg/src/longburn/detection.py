"""Maneuver detection over a grid of burn windows.

Each candidate window (t_b, t_f) gets a constant-thrust fit against the
post-maneuver measurements. Candidates whose WRMS index is under the
threshold are kept, and the one needing the least velocity change wins.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .correlation import CorrelationReport
from .dynamics import ForceModelConfig, InertialState, IntegrationError, Trajectory
from .estimation import (
    EstimationError,
    MeasurementModel,
    ThrustEstimate,
    estimate_thrust,
    impulsive_estimate,
)

J_THRESHOLD = 1.2
MAX_DURATION = 3600.0
RIDGE_SPREAD = 0.02
IMPULSE_WIDTH = 1.0

MODE_LONG = "long-duration"
MODE_IMPULSIVE = "impulsive"
MODE_NONE = "none"


class NoCorrelationError(RuntimeError):
    """No epoch passed the correlation gate, so there is nothing to search."""


@dataclass(frozen=True)
class SearchWindow:
    t_0: float
    t_1: float
    intervals: tuple[tuple[float, float], ...]  # admissible burn midpoints
    max_duration: float = MAX_DURATION

    def __post_init__(self):
        if not self.t_0 < self.t_1:
            raise ValueError("search window must have t_0 < t_1")
        if self.max_duration <= 0:
            raise ValueError("max_duration must be positive")
        for lo, hi in self.intervals:
            if lo > hi or lo < self.t_0 or hi > self.t_1:
                raise ValueError(f"hint interval [{lo}, {hi}] outside [{self.t_0}, {self.t_1}]")

    @classmethod
    def full(cls, t_0: float, t_1: float, max_duration: float = MAX_DURATION) -> SearchWindow:
        return cls(t_0, t_1, ((t_0, t_1),), max_duration)

    def contains(self, t: float) -> bool:
        return any(lo <= t <= hi for lo, hi in self.intervals)

    @property
    def span(self) -> float:
        return float(sum(hi - lo for lo, hi in self.intervals))


def _merge(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [(a, b) for a, b in out]


def build_search_window(
    t_0: float,
    t_1: float,
    hints: Sequence[float] | CorrelationReport,
    max_duration: float = MAX_DURATION,
    gate: str = "auto",
) -> SearchWindow:
    """Pad sub-threshold epochs by half the longest burn and clip to [t_0, t_1]."""
    if isinstance(hints, CorrelationReport):
        hints = hints.sub_threshold_epochs(gate)
    hints = np.asarray(hints, dtype=float)
    half = 0.5 * max_duration
    raw = [(max(t - half, t_0), min(t + half, t_1)) for t in hints]
    merged = [iv for iv in _merge(raw) if iv[0] <= iv[1]]
    if not merged:
        raise NoCorrelationError("no sub-threshold epoch falls inside the search window")
    return SearchWindow(t_0, t_1, tuple(merged), max_duration)


@dataclass(frozen=True)
class GridSpec:
    midpoint_step: float = 60.0
    duration_step: float = 60.0
    max_duration: Optional[float] = None  # defaults to the window's
    min_duration: Optional[float] = None  # defaults to one duration step

    def midpoints(self, window: SearchWindow) -> np.ndarray:
        """Midpoints on a lattice anchored at t_0 that fall in a hint interval."""
        k_lo = math.ceil((window.intervals[0][0] - window.t_0) / self.midpoint_step - 1e-9)
        k_hi = math.floor((window.intervals[-1][1] - window.t_0) / self.midpoint_step + 1e-9)
        lattice = window.t_0 + self.midpoint_step * np.arange(k_lo, k_hi + 1)
        return np.array([t for t in lattice if window.contains(t)])

    def durations(self, window: SearchWindow) -> np.ndarray:
        top = self.max_duration if self.max_duration is not None else window.max_duration
        bottom = self.min_duration if self.min_duration is not None else self.duration_step
        n = int(math.floor((top - bottom) / self.duration_step + 1e-9))
        return bottom + self.duration_step * np.arange(n + 1)

    def pairs(self, window: SearchWindow) -> list[tuple[float, float]]:
        out = []
        for mid in self.midpoints(window):
            for dur in self.durations(window):
                t_b, t_f = mid - 0.5 * dur, mid + 0.5 * dur
                if t_b >= window.t_0 and t_f <= window.t_1:
                    out.append((float(t_b), float(t_f)))
        return sorted(out)


@dataclass
class ManeuverCandidate:
    t_b: float
    t_f: float
    J: float
    delta_v: float
    accepted: bool
    estimate: Optional[ThrustEstimate] = None
    dv_eci: Optional[np.ndarray] = None  # impulsive candidates only
    error: Optional[str] = None

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.t_b + self.t_f)

    @property
    def duration(self) -> float:
        return self.t_f - self.t_b

    @property
    def u(self) -> Optional[np.ndarray]:
        return None if self.estimate is None else self.estimate.u


@dataclass
class DetectionResult:
    candidates: list[ManeuverCandidate]
    selected: Optional[ManeuverCandidate]
    mode: str
    threshold: float
    kind: str = MODE_LONG  # which estimator produced the grid
    notes: dict = field(default_factory=dict)

    @property
    def accepted(self) -> list[ManeuverCandidate]:
        return [c for c in self.candidates if c.accepted]

    def surface(self):
        """(t_b axis, t_f axis, J grid, dV grid) with NaN where no candidate exists."""
        tb = np.unique([c.t_b for c in self.candidates])
        tf = np.unique([c.t_f for c in self.candidates])
        J = np.full((len(tb), len(tf)), np.nan)
        dv = np.full_like(J, np.nan)
        ib = {t: i for i, t in enumerate(tb)}
        jf = {t: j for j, t in enumerate(tf)}
        for c in self.candidates:
            J[ib[c.t_b], jf[c.t_f]] = c.J
            dv[ib[c.t_b], jf[c.t_f]] = c.delta_v
        return tb, tf, J, dv

    def accepted_regions(self, midpoint_step: float, duration_step: float) -> int:
        """Number of connected accepted regions on the (midpoint, duration) lattice (8-neighbour)."""
        cells = {
            (round(c.midpoint / midpoint_step * 2), round(c.duration / duration_step)) for c in self.accepted
        }
        # midpoints are tracked in half steps so odd and even durations share one lattice
        seen: set = set()
        regions = 0
        for cell in cells:
            if cell in seen:
                continue
            regions += 1
            stack = [cell]
            seen.add(cell)
            while stack:
                m, d = stack.pop()
                for dm in (-2, -1, 0, 1, 2):
                    for dd in (-1, 0, 1):
                        nb = (m + dm, d + dd)
                        if nb in cells and nb not in seen:
                            seen.add(nb)
                            stack.append(nb)
        return regions

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tb_s", "tf_s", "J", "dV_mps", "accepted"])
            for c in self.candidates:
                w.writerow([f"{c.t_b:.3f}", f"{c.t_f:.3f}", f"{c.J:.9g}", f"{c.delta_v:.9g}", int(c.accepted)])

    def summary(self) -> dict:
        out = {
            "mode": self.mode,
            "estimator": self.kind,
            "threshold": self.threshold,
            "candidates": len(self.candidates),
            "accepted": len(self.accepted),
            "diverged": sum(1 for c in self.candidates if not math.isfinite(c.J)),
        }
        s = self.selected
        if s is not None:
            out.update(
                tb=s.t_b,
                tf=s.t_f,
                dV=s.delta_v,
                J=s.J,
                u_vvlh=None if s.u is None else [float(x) for x in s.u],
                iterations=None if s.estimate is None else s.estimate.iterations,
            )
            if s.dv_eci is not None:
                out["dv_eci"] = [float(x) for x in s.dv_eci]
        out.update(self.notes)
        return out

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


# ---------------------------------------------------------------------------
# candidate evaluation


def _long_task(args):
    pre, t_b, t_f, meas, cfg, threshold = args
    try:
        est = estimate_thrust(pre, t_b, t_f, meas, cfg)
    except (EstimationError, IntegrationError, np.linalg.LinAlgError) as exc:
        return ManeuverCandidate(t_b, t_f, math.inf, math.nan, False, error=str(exc))
    ok = est.converged and est.J <= threshold
    return ManeuverCandidate(t_b, t_f, est.J, est.delta_v, ok, est)


def _impulsive_task(args):
    pre, t_m, meas, cfg, threshold, width = args
    t_b, t_f = t_m - 0.5 * width, t_m + 0.5 * width
    try:
        imp = impulsive_estimate(pre, t_m, meas, cfg, width)
    except (EstimationError, IntegrationError, np.linalg.LinAlgError) as exc:
        return ManeuverCandidate(t_b, t_f, math.inf, math.nan, False, error=str(exc))
    ok = imp.thrust.converged and imp.J <= threshold
    return ManeuverCandidate(t_b, t_f, imp.J, imp.delta_v, ok, imp.thrust, dv_eci=imp.dv)


def _run(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (8 * workers))))


def _as_trajectory(pre, cfg: ForceModelConfig) -> Trajectory:
    return pre if isinstance(pre, Trajectory) else Trajectory(pre, cfg)


def _select(candidates: list[ManeuverCandidate]) -> Optional[ManeuverCandidate]:
    acc = [c for c in candidates if c.accepted]
    if not acc:
        return None
    # ties broken by grid order, which is deterministic
    return min(acc, key=lambda c: (c.delta_v, c.t_b, c.t_f))


def _is_impulsive_ridge(candidates, selected, durations) -> bool:
    """Accepted durations at the selected midpoint reach the shortest grid
    duration, the selection is that shortest member, and the velocity changes
    along the ridge agree within RIDGE_SPREAD."""
    at_mid = [c for c in candidates if abs(c.midpoint - selected.midpoint) < 1e-6]
    at_mid.sort(key=lambda c: c.duration)
    if not at_mid or abs(at_mid[0].duration - durations[0]) > 1e-6 or not at_mid[0].accepted:
        return False
    ridge = []
    for c in at_mid:
        if not c.accepted:
            break
        ridge.append(c.delta_v)
    # the cheapest fit must itself be the shortest burn, otherwise the data prefer a finite duration
    if selected is not at_mid[0]:
        return False
    return (max(ridge) - min(ridge)) / min(ridge) < RIDGE_SPREAD


def detect(
    pre: InertialState | Trajectory,
    meas: MeasurementModel,
    window: SearchWindow,
    cfg: ForceModelConfig,
    grid: GridSpec = GridSpec(),
    threshold: float = J_THRESHOLD,
    workers: int = 1,
) -> DetectionResult:
    """Long-duration detection: fit every grid window, keep J <= threshold, pick minimum dV."""
    if len(meas.epochs) and meas.epochs[0] < window.t_1:
        raise ValueError("measurements precede the end of the search window")
    traj = _as_trajectory(pre, cfg)
    pairs = grid.pairs(window)
    tasks = [(traj, tb, tf, meas, cfg, threshold) for tb, tf in pairs]
    candidates = sorted(_run(_long_task, tasks, workers), key=lambda c: (c.t_b, c.t_f))
    selected = _select(candidates)
    if selected is None:
        mode = MODE_NONE
    elif _is_impulsive_ridge(candidates, selected, grid.durations(window)):
        mode = MODE_IMPULSIVE
    else:
        mode = MODE_LONG
    return DetectionResult(candidates, selected, mode, threshold, MODE_LONG)


def detect_impulsive(
    pre: InertialState | Trajectory,
    meas: MeasurementModel,
    window: SearchWindow,
    cfg: ForceModelConfig,
    step: float = 60.0,
    threshold: float = J_THRESHOLD,
    width: float = IMPULSE_WIDTH,
    workers: int = 1,
) -> DetectionResult:
    """One-dimensional scan over impulse epochs inside the hint intervals."""
    traj = _as_trajectory(pre, cfg)
    grid = GridSpec(midpoint_step=step)
    t_ms = [t for t in grid.midpoints(window) if t - 0.5 * width >= window.t_0 and t + 0.5 * width <= window.t_1]
    tasks = [(traj, float(t), meas, cfg, threshold, width) for t in t_ms]
    candidates = sorted(_run(_impulsive_task, tasks, workers), key=lambda c: (c.t_b, c.t_f))
    selected = _select(candidates)
    mode = MODE_NONE if selected is None else MODE_IMPULSIVE
    return DetectionResult(candidates, selected, mode, threshold, MODE_IMPULSIVE)


def noise_floor_delta_v(candidate: ManeuverCandidate, k: float = 3.0) -> float:
    """k-sigma uncertainty of the fitted velocity change along the fitted thrust direction."""
    est = candidate.estimate
    if est is None or not np.all(np.isfinite(est.covariance)):
        return math.inf
    norm = np.linalg.norm(est.u)
    if norm == 0:
        return k * (est.t_f - est.t_b) * math.sqrt(float(np.trace(est.covariance)))
    uhat = est.u / norm
    return k * (est.t_f - est.t_b) * math.sqrt(float(uhat @ est.covariance @ uhat))


def is_null_detection(result: DetectionResult, k: float = 3.0) -> bool:
    """True when the selected velocity change is indistinguishable from zero."""
    s = result.selected
    return s is not None and s.delta_v < noise_floor_delta_v(s, k)
