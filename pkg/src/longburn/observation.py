"""Space-based right ascension / declination measurements."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .constants import C_LIGHT
from .dynamics import Epoch, InertialState, Trajectory


class GeometryError(ValueError):
    """Zero range or a line of sight along the pole."""


@dataclass(frozen=True)
class AngularMeasurement:
    epoch: Epoch
    alpha: float
    delta: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if abs(self.delta) > np.pi / 2 + 1e-12:
            raise ValueError("declination outside [-pi/2, pi/2]")


@dataclass(frozen=True)
class Tracklet:
    id: str
    measurements: tuple[AngularMeasurement, ...]
    observer_id: str = "sbss"

    def __post_init__(self):
        object.__setattr__(self, "measurements", tuple(self.measurements))
        if not self.measurements:
            raise ValueError(f"tracklet {self.id} is empty")
        ep = self.epochs
        if np.any(np.diff(ep) <= 0):
            raise ValueError(f"tracklet {self.id} epochs are not strictly increasing")

    @property
    def epochs(self) -> np.ndarray:
        return np.array([m.epoch for m in self.measurements])

    @property
    def angles(self) -> np.ndarray:
        return np.array([[m.alpha, m.delta] for m in self.measurements])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([m.sigma for m in self.measurements])

    @property
    def start(self) -> float:
        return self.measurements[0].epoch

    @property
    def end(self) -> float:
        return self.measurements[-1].epoch

    def __len__(self):
        return len(self.measurements)


# an observer ephemeris is just a propagated platform orbit
ObserverEphemeris = Trajectory


def angles_from_vector(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """RA/Dec of (..., 3) vectors; atan2(0, 0) = 0 at the poles."""
    d = np.asarray(d, dtype=float)
    n = np.linalg.norm(d, axis=-1)
    if np.any(n == 0):
        raise GeometryError("zero range between target and observer")
    alpha = np.arctan2(d[..., 1], d[..., 0])
    delta = np.arcsin(np.clip(d[..., 2] / n, -1.0, 1.0))
    return alpha, delta


def measure_simple(r_t, r_s) -> tuple[float, float]:
    alpha, delta = angles_from_vector(np.asarray(r_t, float) - np.asarray(r_s, float))
    return float(alpha), float(delta)


def corrected_los(r_t, v_t, r_s, v_s, c: float = C_LIGHT) -> np.ndarray:
    """Separation vector shifted for light time and aberration, shape (..., 3).

    The light time uses the geometric range (one fixed-point pass).
    """
    rel = np.asarray(r_t, float) - np.asarray(r_s, float)
    rho = np.linalg.norm(rel, axis=-1, keepdims=True)
    if np.any(rho == 0):
        raise GeometryError("zero range between target and observer")
    return rel + (rho / c) * (np.asarray(v_s, float) - np.asarray(v_t, float))


def measure_corrected_batch(target: np.ndarray, observer: np.ndarray, c: float = C_LIGHT) -> np.ndarray:
    """(n, 2) angles for (n, 6) target and observer state arrays."""
    d = corrected_los(target[:, :3], target[:, 3:], observer[:, :3], observer[:, 3:], c)
    alpha, delta = angles_from_vector(d)
    return np.column_stack((alpha, delta))


def measure_corrected(target: InertialState, observer: InertialState, c: float = C_LIGHT) -> tuple[float, float]:
    if target.epoch != observer.epoch:
        raise ValueError("target and observer states must share an epoch")
    alpha, delta = angles_from_vector(corrected_los(target.r, target.v, observer.r, observer.v, c))
    return float(alpha), float(delta)


def angle_partials_batch(rel: np.ndarray) -> np.ndarray:
    """d(alpha, delta)/d(r_t) for (n, 3) separation vectors; returns (n, 2, 3)."""
    x, y, z = rel[:, 0], rel[:, 1], rel[:, 2]
    q2 = x * x + y * y
    if np.any(q2 <= 0):
        raise GeometryError("line of sight along the pole; RA partials undefined")
    q = np.sqrt(q2)
    rho2 = q2 + z * z
    H = np.zeros((len(rel), 2, 3))
    H[:, 0, 0] = -y / q2
    H[:, 0, 1] = x / q2
    H[:, 1, 0] = -x * z / (rho2 * q)
    H[:, 1, 1] = -y * z / (rho2 * q)
    H[:, 1, 2] = q / rho2
    return H


def measurement_partials(target: InertialState, observer: InertialState, c: float = C_LIGHT):
    """(H_r, H_v), each 2x3, rows ordered (alpha, delta).

    The velocity partial is -(rho/c) H_r: the target velocity enters the
    line of sight with a negative light-time coefficient.
    """
    rel = (target.r - observer.r)[None, :]
    H_r = angle_partials_batch(rel)[0]
    rho = float(np.linalg.norm(rel))
    return H_r, -(rho / c) * H_r


def state_partials_batch(target: np.ndarray, observer: np.ndarray, c: float = C_LIGHT) -> np.ndarray:
    """[H_r  H_v] for every epoch, shape (n, 2, 6)."""
    rel = target[:, :3] - observer[:, :3]
    H_r = angle_partials_batch(rel)
    rho = np.linalg.norm(rel, axis=1)
    return np.concatenate((H_r, -(rho / c)[:, None, None] * H_r), axis=2)


@dataclass(frozen=True)
class TrackletWindow:
    start: Epoch
    duration: float

    def epochs(self, cadence: float) -> np.ndarray:
        n = int(np.floor(self.duration / cadence + 1e-9))
        return self.start + cadence * np.arange(n + 1)


def simulate_tracklets(
    windows: Sequence[TrackletWindow],
    target: Trajectory,
    observer: Trajectory,
    sigma: float,
    cadence: float = 1.0,
    seed: Optional[int] = 0,
    observer_id: str = "sbss",
    id_prefix: str = "T",
    c: float = C_LIGHT,
) -> list[Tracklet]:
    """Noisy corrected RA/Dec tracklets, one per window.

    Each window draws from its own child of ``SeedSequence(seed)``, so the
    noise of a window does not depend on how many windows precede it.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    children = np.random.SeedSequence(seed).spawn(len(windows))
    tracklets = []
    for k, (win, ss) in enumerate(zip(windows, children)):
        epochs = win.epochs(cadence)
        if len(epochs) == 0 or win.duration < 0:
            raise ValueError(f"window {k} is empty")
        ang = measure_corrected_batch(target.states_at(epochs), observer.states_at(epochs), c)
        rng = np.random.default_rng(ss)
        noisy = ang + sigma * rng.standard_normal(ang.shape)
        noisy[:, 0] = np.angle(np.exp(1j * noisy[:, 0]))
        noisy[:, 1] = np.clip(noisy[:, 1], -np.pi / 2, np.pi / 2)
        meas = tuple(AngularMeasurement(float(t), float(a), float(d), sigma) for t, (a, d) in zip(epochs, noisy))
        tracklets.append(Tracklet(f"{id_prefix}{k:02d}", meas, observer_id))
    return tracklets
