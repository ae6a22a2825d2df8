"""End-to-end flow: post-maneuver orbit fit, correlation gate, then detection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .correlation import CorrelationReport, OrbitEstimate, correlate_orbits, epoch_grid
from .detection import (
    MODE_NONE,
    DetectionResult,
    GridSpec,
    NoCorrelationError,
    SearchWindow,
    build_search_window,
    detect,
    detect_impulsive,
)
from .dynamics import Trajectory
from .estimation import OrbitFit, StackedMeasurements, determine_post_orbit
from .observation import Tracklet
from .scenario import Scenario, ScenarioError

MODES = ("auto", "impulsive", "long")


@dataclass
class CorrelationOutcome:
    fit: OrbitFit
    report: CorrelationReport
    gate: Optional[str]  # "strict", "relaxed" or None when neither passes
    t_0: float
    t_1: float
    measurements: StackedMeasurements

    @property
    def correlated(self) -> bool:
        return self.gate is not None


def post_measurements(
    scenario: Scenario, tracklets: Sequence[Tracklet], n_post: Optional[int] = None
) -> StackedMeasurements:
    _, post = scenario.split(tracklets)
    n = scenario.detection.post_tracklets if n_post is None else n_post
    if n < 2:
        raise ScenarioError("at least two post-maneuver tracklets are needed")
    if len(post) < n:
        raise ScenarioError(f"only {len(post)} post-maneuver tracklets available, {n} requested")
    return StackedMeasurements.from_tracklets(post[:n], scenario.observer())


def correlate(
    scenario: Scenario,
    tracklets: Sequence[Tracklet],
    n_post: Optional[int] = None,
    ball_radius: Optional[float] = None,
    chi_max: Optional[float] = None,
) -> CorrelationOutcome:
    """Fit the post-maneuver orbit and compare it with the pre-maneuver orbit over [t_0, t_1].

    The relaxed series is always computed so both gates can be reported.
    """
    det = scenario.detection
    meas = post_measurements(scenario, tracklets, n_post)
    pre = scenario.pre_state()
    fit = determine_post_orbit(meas, Trajectory(pre, scenario.force), scenario.force)
    t_0, t_1 = scenario.t0, float(meas.epochs[0])
    grid = epoch_grid(t_0, t_1, det.correlation_step)
    report = correlate_orbits(
        OrbitEstimate(pre, np.zeros((6, 6)), scenario.force, det.covariance_floor),
        OrbitEstimate(fit.state, fit.covariance, scenario.force),
        grid,
        chi_max=det.chi_max if chi_max is None else chi_max,
        d=det.ball_radius if ball_radius is None else ball_radius,
    )
    gate = "strict" if report.correlated_strict else ("relaxed" if report.correlated_relaxed else None)
    return CorrelationOutcome(fit, report, gate, t_0, t_1, meas)


@dataclass
class DetectionOutcome:
    correlation: CorrelationOutcome
    window: SearchWindow
    result: DetectionResult
    attempts: list[DetectionResult]


def run_detection(
    scenario: Scenario,
    tracklets: Sequence[Tracklet],
    mode: str = "auto",
    n_post: Optional[int] = None,
    grid: Optional[GridSpec] = None,
    threshold: Optional[float] = None,
    impulse_step: Optional[float] = None,
    workers: int = 1,
    window: Optional[SearchWindow] = None,
) -> DetectionOutcome:
    """Correlate, derive the search window, then detect.

    ``auto`` tries the impulsive scan first and falls back to the
    long-duration grid when no impulse is accepted.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    det = scenario.detection
    corr = correlate(scenario, tracklets, n_post)
    if not corr.correlated:
        raise NoCorrelationError(
            f"minimum strict chi {corr.report.chi_strict.min():.3f}, relaxed "
            f"{corr.report.chi_relaxed.min():.3f}, gate {corr.report.chi_max}"
        )
    if window is None:
        window = build_search_window(corr.t_0, corr.t_1, corr.report.sub_threshold_epochs(corr.gate), det.max_duration)
    grid = grid or GridSpec(det.midpoint_step, det.duration_step)
    threshold = det.threshold if threshold is None else threshold
    step = det.impulse_step if impulse_step is None else impulse_step
    pre = Trajectory(scenario.pre_state(), scenario.force)
    attempts = []
    if mode in ("auto", "impulsive"):
        attempts.append(detect_impulsive(pre, corr.measurements, window, scenario.force, step, threshold, workers=workers))
    if mode == "long" or (mode == "auto" and attempts[-1].mode == MODE_NONE):
        attempts.append(detect(pre, corr.measurements, window, scenario.force, grid, threshold, workers=workers))
    result = attempts[-1]
    result.notes.update(gate=corr.gate, t_0=corr.t_0, t_1=corr.t_1, post_fit_J=corr.fit.J)
    return DetectionOutcome(corr, window, result, attempts)
