"""Least-squares estimation: post-maneuver orbit determination and constant-thrust fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence, Union

import numpy as np

from .dynamics import (
    ForceModelConfig,
    InertialState,
    IntegrationError,
    ManeuverPolicy,
    Trajectory,
    propagate,
    propagate_states,
    propagate_variational_many,
    sensitivity_between,
    stm_between,
    vvlh_rotation,
)
from .observation import Tracklet, measure_corrected_batch, state_partials_batch

MAX_ITERATIONS = 25
STEP_TOL = 1e-6
J_TOL = 1e-4
OD_J_TOL = 1e-3
NOISE_FREE_J = 1e-9  # below this the fit is at integrator precision; stop iterating
OD_NOISE_FREE_J = 1e-6  # six-state fits bottom out near 5e-9 and jitter there
MAX_HALVINGS = 12


class EstimationError(RuntimeError):
    pass


class DivergenceError(EstimationError):
    pass


class SingularNormalMatrixError(EstimationError):
    pass


def _wrap(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def performance_index(residuals: np.ndarray, weights: np.ndarray) -> float:
    """WRMS over all scalar components: sqrt(r' W r / len(r)) with W = diag(weights).

    For stacked angle pairs len(r) = 2n, so this is the 1/(2n) normalisation.
    """
    residuals = np.asarray(residuals, dtype=float)
    if residuals.size == 0:
        raise ValueError("no residuals")
    return float(math.sqrt(np.sum(weights * residuals * residuals) / residuals.size))


class MeasurementModel(Protocol):
    epochs: np.ndarray

    def residuals(self, states: np.ndarray) -> np.ndarray: ...

    def partials(self, states: np.ndarray) -> np.ndarray: ...

    @property
    def weights(self) -> np.ndarray: ...

    def index(self, residuals: np.ndarray) -> float: ...


@dataclass
class StackedMeasurements:
    """Angle pairs from one or more tracklets, flattened as [a1, d1, a2, d2, ...]."""

    epochs: np.ndarray
    Y: np.ndarray  # (n, 2) [rad]
    sigma: np.ndarray  # (n,) [rad]
    observer_states: np.ndarray  # (n, 6)

    def __post_init__(self):
        self.epochs = np.asarray(self.epochs, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float).reshape(-1, 2)
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), self.epochs.shape).copy()
        if np.any(self.sigma <= 0):
            raise ValueError("measurement sigma must be positive for weighting")
        if np.any(np.diff(self.epochs) < 0):
            raise ValueError("stacked epochs must be non-decreasing")

    @classmethod
    def from_tracklets(
        cls, tracklets: Sequence[Tracklet], observer: Trajectory, sigma: Optional[float] = None
    ) -> StackedMeasurements:
        """Stack tracklets in time order; ``sigma`` overrides the per-measurement values."""
        if not tracklets:
            raise ValueError("no tracklets")
        ordered = sorted(tracklets, key=lambda t: t.start)
        epochs = np.concatenate([t.epochs for t in ordered])
        Y = np.concatenate([t.angles for t in ordered])
        sig = np.full(len(epochs), sigma) if sigma is not None else np.concatenate([t.sigmas for t in ordered])
        return cls(epochs, Y, sig, observer.states_at(epochs))

    def __len__(self):
        return len(self.epochs)

    @property
    def R_Y(self) -> np.ndarray:
        return np.diag(np.repeat(self.sigma**2, 2))

    @property
    def weights(self) -> np.ndarray:
        return np.repeat(self.sigma**-2, 2)

    def predict(self, states: np.ndarray) -> np.ndarray:
        return measure_corrected_batch(states, self.observer_states)

    def residuals(self, states: np.ndarray) -> np.ndarray:
        d = self.Y - self.predict(states)
        d[:, 0] = _wrap(d[:, 0])
        return d.ravel()

    def partials(self, states: np.ndarray) -> np.ndarray:
        return state_partials_batch(states, self.observer_states)

    def index(self, residuals: np.ndarray) -> float:
        return performance_index(residuals, self.weights)

    def subset(self, mask: np.ndarray) -> StackedMeasurements:
        return StackedMeasurements(self.epochs[mask], self.Y[mask], self.sigma[mask], self.observer_states[mask])


@dataclass
class PositionMeasurements:
    """Virtual position observations with unit isotropic weights.

    The index is the 3-D position RMS in metres, sqrt(mean |dr|^2).
    """

    epochs: np.ndarray
    positions: np.ndarray  # (n, 3) [m]

    def __post_init__(self):
        self.epochs = np.asarray(self.epochs, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)

    def __len__(self):
        return len(self.epochs)

    @property
    def weights(self) -> np.ndarray:
        return np.ones(3 * len(self.epochs))

    def residuals(self, states: np.ndarray) -> np.ndarray:
        return (self.positions - states[:, :3]).ravel()

    def partials(self, states: np.ndarray) -> np.ndarray:
        H = np.zeros((len(states), 3, 6))
        H[:, :, :3] = np.eye(3)
        return H

    def index(self, residuals: np.ndarray) -> float:
        return float(math.sqrt(3.0 * np.mean(residuals * residuals)))


def _normal_solve(H: np.ndarray, r: np.ndarray, w: np.ndarray):
    """Weighted normal-equation step and its inverse normal matrix."""
    N = H.T @ (w[:, None] * H)
    b = H.T @ (w * r)
    # column scaling keeps the condition check meaningful across mixed units
    s = np.sqrt(np.diag(N))
    if np.any(s == 0):
        raise SingularNormalMatrixError("a parameter has no influence on the measurements")
    Ns = N / np.outer(s, s)
    if np.linalg.cond(Ns) > 1e14:
        raise SingularNormalMatrixError(f"normal matrix is singular (scaled cond {np.linalg.cond(Ns):.2e})")
    Ninv = np.linalg.inv(Ns) / np.outer(s, s)
    return Ninv @ b, 0.5 * (Ninv + Ninv.T)


# ---------------------------------------------------------------------------
# orbit determination


@dataclass
class OrbitFit:
    state: InertialState
    covariance: np.ndarray
    J: float
    iterations: int
    history: list = field(default_factory=list)


def _od_evaluate(state: InertialState, meas: MeasurementModel, cfg: ForceModelConfig):
    x, phi, _ = propagate_variational_many(state, cfg, meas.epochs)
    r = meas.residuals(x)
    H = np.einsum("nij,njk->nik", meas.partials(x), phi).reshape(len(r), 6)
    return r, H


def bls_orbit_determination(
    meas: StackedMeasurements,
    guess: InertialState,
    cfg: ForceModelConfig,
    max_iterations: int = MAX_ITERATIONS,
) -> OrbitFit:
    """Batch least-squares 6-state fit at the epoch of the first measurement."""
    t_est = float(meas.epochs[0])
    state = guess if guess.epoch == t_est else propagate(guess, cfg, t_est)
    r, H = _od_evaluate(state, meas, cfg)
    J = meas.index(r)
    history = [J]
    increases = 0
    cov = None
    for it in range(1, max_iterations + 1):
        dx, cov = _normal_solve(H, r, meas.weights)
        state = InertialState.from_vector(t_est, state.vector + dx)
        r, H = _od_evaluate(state, meas, cfg)
        J_new = meas.index(r)
        history.append(J_new)
        increases = increases + 1 if J_new > J else 0
        if increases >= 3:
            raise DivergenceError(f"orbit fit diverging: WRMS history {history}")
        done = abs(J_new - J) <= OD_J_TOL * J or J_new < OD_NOISE_FREE_J
        J = J_new
        if done:
            _, cov = _normal_solve(H, r, meas.weights)
            return OrbitFit(state, cov, J, it, history)
    raise DivergenceError(f"orbit fit did not converge in {max_iterations} iterations: {history}")


def _rotate_about(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotation matrices (k, 3, 3) about a unit axis."""
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    s, c = np.sin(angles)[:, None, None], np.cos(angles)[:, None, None]
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def seed_from_orbit(
    reference: Trajectory,
    meas: StackedMeasurements,
    cfg: ForceModelConfig,
    da_span: float = 60e3,
    da_step: float = 2e3,
    phase_step_deg: float = 0.05,
    samples_per_tracklet: int = 3,
) -> list[InertialState]:
    """Initial guesses for a post-maneuver fit from a pre-maneuver orbit.

    The reference state at the first measurement epoch is rescaled to a
    family of semi-major axes, and each member is swept in along-track phase
    by rotating its propagated positions about the orbit normal. Angle
    residuals at a few epochs rank the seeds; the best per semi-major axis
    are returned in order of increasing residual.
    """
    t1 = float(meas.epochs[0])
    base = reference.state_at(t1)
    # a handful of epochs per contiguous block of measurements
    breaks = np.nonzero(np.diff(meas.epochs) > 300.0)[0] + 1
    pick = []
    for block in np.split(np.arange(len(meas.epochs)), breaks):
        pick.extend(block[np.linspace(0, len(block) - 1, min(samples_per_tracklet, len(block))).astype(int)])
    pick = np.array(sorted(set(pick)))
    sub = meas.subset(np.isin(np.arange(len(meas)), pick))
    h = np.cross(base.r, base.v)
    h /= np.linalg.norm(h)
    phases = np.deg2rad(np.arange(-180.0, 180.0, phase_step_deg))
    R = _rotate_about(h, phases)
    scored = []
    for da in np.arange(-da_span, da_span + 0.5 * da_step, da_step):
        rn = np.linalg.norm(base.r)
        k = (rn + da) / rn
        cand = InertialState(t1, base.r * k, base.v / math.sqrt(k))
        x = propagate_states(cand, cfg, sub.epochs)
        pos = np.einsum("kij,nj->kni", R, x[:, :3])
        los = pos - sub.observer_states[None, :, :3]
        rho = np.linalg.norm(los, axis=2)
        alpha = np.arctan2(los[..., 1], los[..., 0])
        delta = np.arcsin(los[..., 2] / rho)
        res = (_wrap(sub.Y[None, :, 0] - alpha) ** 2 + (sub.Y[None, :, 1] - delta) ** 2).sum(axis=1)
        best = int(np.argmin(res))
        r0 = R[best] @ cand.r
        v0 = R[best] @ cand.v
        scored.append((float(res[best]), InertialState(t1, r0, v0)))
    scored.sort(key=lambda s: s[0])
    return [s for _, s in scored]


def determine_post_orbit(
    meas: StackedMeasurements,
    reference: Trajectory,
    cfg: ForceModelConfig,
    n_seeds: int = 5,
) -> OrbitFit:
    """Seed scan followed by BLS from the best few seeds; lowest WRMS wins."""
    best: Optional[OrbitFit] = None
    errors = []
    for seed in seed_from_orbit(reference, meas, cfg)[:n_seeds]:
        try:
            fit = bls_orbit_determination(meas, seed, cfg)
        except (EstimationError, IntegrationError, ValueError) as exc:
            errors.append(str(exc))
            continue
        if best is None or fit.J < best.J:
            best = fit
    if best is None:
        raise DivergenceError("no seed converged: " + "; ".join(errors))
    return best


# ---------------------------------------------------------------------------
# thrust estimation


@dataclass
class ThrustEstimate:
    t_b: float
    t_f: float
    u: np.ndarray  # VVLH [m/s^2]
    J: float
    iterations: int
    converged: bool
    covariance: np.ndarray
    history: list = field(default_factory=list)

    @property
    def delta_v(self) -> float:
        return (self.t_f - self.t_b) * float(np.linalg.norm(self.u))

    @property
    def policy(self) -> ManeuverPolicy:
        return ManeuverPolicy(self.t_b, self.t_f, self.u)


PreState = Union[InertialState, Trajectory]


def _coast_to(pre: PreState, cfg: ForceModelConfig, t: float) -> InertialState:
    if isinstance(pre, Trajectory):
        return pre.state_at(t)
    return propagate(pre, cfg, t)


def thrust_partials(
    start: InertialState,
    t_b: float,
    t_f: float,
    u: np.ndarray,
    meas: MeasurementModel,
    cfg: ForceModelConfig,
):
    """Residuals and dY/du for a burn on (t_b, t_f] starting from ``start``.

    The chain rule runs through the STM from t_f to each epoch and the
    thrust sensitivity accumulated over the window, with the integration
    reference at ``start.epoch``.
    """
    policy = ManeuverPolicy(t_b, t_f, np.asarray(u, dtype=float))
    epochs = np.concatenate(([t_b, t_f], meas.epochs))
    x, phi, S = propagate_variational_many(start, cfg, epochs, sens_window=(t_b, t_f), policy=policy)
    phi_b0, phi_f0, phi_k0 = phi[0], phi[1], phi[2:]
    S_b0, S_f0 = S[0], S[1]
    phi_kf = stm_between(phi_k0, phi_f0)
    S_fb = sensitivity_between(S_f0, stm_between(phi_f0, phi_b0), S_b0)
    states = x[2:]
    H = meas.partials(states)
    dYdu = np.einsum("nij,njk,kl->nil", H, phi_kf, S_fb).reshape(-1, 3)
    return meas.residuals(states), dYdu


def estimate_thrust(
    pre: PreState,
    t_b: float,
    t_f: float,
    meas: MeasurementModel,
    cfg: ForceModelConfig,
    u0: Optional[np.ndarray] = None,
    max_iterations: int = MAX_ITERATIONS,
) -> ThrustEstimate:
    """Gauss-Newton fit of a constant VVLH thrust over a fixed burn window.

    The pre-maneuver orbit is held fixed. A step that raises J is halved
    until it does not; otherwise the iteration is the plain normal-equation
    update.
    """
    if not t_b < t_f:
        raise ValueError("burn start must precede burn end")
    if len(meas.epochs) == 0 or t_f > meas.epochs[0]:
        raise ValueError("burn must end before the first measurement")
    start = _coast_to(pre, cfg, t_b)
    if isinstance(pre, InertialState) and pre.epoch > t_b:
        raise ValueError("burn starts before the pre-maneuver epoch")
    w = meas.weights
    u = np.zeros(3) if u0 is None else np.asarray(u0, dtype=float).copy()
    r, G = thrust_partials(start, t_b, t_f, u, meas, cfg)
    J = meas.index(r)
    history = [J]
    cov = np.full((3, 3), np.nan)
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        du, cov = _normal_solve(G, r, w)
        step = 1.0
        for _ in range(MAX_HALVINGS + 1):
            u_try = u + step * du
            r_try, G_try = thrust_partials(start, t_b, t_f, u_try, meas, cfg)
            J_try = meas.index(r_try)
            if J_try <= J or not np.isfinite(J):
                break
            step *= 0.5
        else:
            # no descent along the Gauss-Newton direction: J is at its floor
            converged = True
            break
        rel_step = np.linalg.norm(step * du) / max(np.linalg.norm(u_try), 1e-9)
        rel_J = abs(J - J_try) / max(J, 1e-300)
        u, r, G, J = u_try, r_try, G_try, J_try
        history.append(J)
        if rel_step < STEP_TOL or rel_J < J_TOL or J < NOISE_FREE_J:
            converged = True
            break
    if converged:
        _, cov = _normal_solve(G, r, w)
    return ThrustEstimate(t_b, t_f, u, J, it, converged, cov, history)


@dataclass
class ImpulsiveEstimate:
    t_m: float
    dv: np.ndarray  # ECI [m/s]
    J: float
    thrust: ThrustEstimate

    @property
    def delta_v(self) -> float:
        return float(np.linalg.norm(self.dv))


def impulsive_estimate(
    pre: PreState,
    t_m: float,
    meas: MeasurementModel,
    cfg: ForceModelConfig,
    width: float = 1.0,
) -> ImpulsiveEstimate:
    """Sudden velocity change at ``t_m`` fitted as a very short constant burn."""
    est = estimate_thrust(pre, t_m - 0.5 * width, t_m + 0.5 * width, meas, cfg)
    mid = _coast_to(pre, cfg, t_m - 0.5 * width)
    mid = propagate(mid, cfg, t_m, est.policy)
    dv = width * (vvlh_rotation(mid) @ est.u)
    return ImpulsiveEstimate(t_m, dv, est.J, est)
