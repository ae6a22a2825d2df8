"""Orbital states, frames, force model and (variational) propagation.

Epochs are plain floats: seconds from the scenario reference instant.
Everything is SI (m, m/s, m/s^2) except :class:`OrbitalElements`, which
keeps the km/deg convention of element tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _backend
from ._kernels_py import gravity, gravity_gradient, vvlh_matrix
from .constants import J2_EARTH, MU_EARTH, R_EARTH

Epoch = float

RTOL = 1e-12
ATOL = 1e-9


class IntegrationError(RuntimeError):
    """Step control could not meet the requested tolerance."""


class DegenerateFrameError(ValueError):
    """Position and velocity are (nearly) parallel."""


@dataclass(frozen=True)
class InertialState:
    epoch: Epoch
    r: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).reshape(3)
        v = np.asarray(self.v, dtype=float).reshape(3)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "epoch", float(self.epoch))

    @classmethod
    def from_vector(cls, epoch: Epoch, x) -> InertialState:
        x = np.asarray(x, dtype=float)
        return cls(epoch, x[0:3], x[3:6])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate((self.r, self.v))

    def validate(self, earth_radius: float = R_EARTH) -> None:
        if np.linalg.norm(self.r) <= earth_radius:
            raise ValueError(f"state at t={self.epoch} lies inside the Earth")
        if np.linalg.norm(np.cross(self.r, self.v)) <= 1e-9 * np.linalg.norm(self.r) * max(
            np.linalg.norm(self.v), 1e-300
        ):
            raise DegenerateFrameError("r and v are parallel")


@dataclass(frozen=True)
class OrbitalElements:
    """Keplerian elements; ``a`` in km, angles in degrees."""

    a: float
    e: float
    i: float
    raan: float
    argp: float
    M: float

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("semi-major axis must be positive")
        if not 0.0 <= self.e < 1.0:
            raise ValueError(f"eccentricity {self.e} outside [0, 1)")


@dataclass(frozen=True)
class ManeuverPolicy:
    """Constant VVLH thrust acceleration ``u`` [m/s^2] on (t_b, t_f]."""

    t_b: Epoch
    t_f: Epoch
    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float).reshape(3))
        if not self.t_b < self.t_f:
            raise ValueError("burn start must precede burn end")

    @property
    def duration(self) -> float:
        return self.t_f - self.t_b

    @property
    def delta_v(self) -> float:
        return self.duration * float(np.linalg.norm(self.u))

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.t_b + self.t_f)


@dataclass(frozen=True)
class ImpulsiveManeuver:
    t_m: Epoch
    dv: np.ndarray  # ECI, m/s

    def __post_init__(self):
        dv = np.asarray(self.dv, dtype=float).reshape(3)
        if not np.all(np.isfinite(dv)):
            raise ValueError("impulse must be finite")
        object.__setattr__(self, "dv", dv)


@dataclass(frozen=True)
class ForceModelConfig:
    mu: float = MU_EARTH
    zonal_degree: int = 2
    j2: float = J2_EARTH
    earth_radius: float = R_EARTH

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.zonal_degree not in (0, 2):
            raise ValueError("zonal_degree must be 0 (two-body) or 2 (J2)")

    @classmethod
    def two_body(cls, mu: float = MU_EARTH) -> ForceModelConfig:
        return cls(mu=mu, zonal_degree=0)

    def packed(self) -> np.ndarray:
        return np.array([self.mu, self.j2, self.earth_radius, float(self.zonal_degree)])


@dataclass(frozen=True)
class VariationalState:
    """State plus STM and thrust sensitivity, both relative to ``t0``."""

    state: InertialState
    stm: np.ndarray  # 6x6
    sens: np.ndarray  # 6x3
    t0: Epoch = 0.0


# ---------------------------------------------------------------------------
# element conversions


def _kepler_E(M: float, e: float) -> float:
    E = M if e < 0.8 else math.pi
    for _ in range(50):
        dE = (E - e * math.sin(E) - M) / (1.0 - e * math.cos(E))
        E -= dE
        if abs(dE) < 1e-15:
            break
    return E


def elements_to_state(el: OrbitalElements, epoch: Epoch = 0.0, *, mu: float = MU_EARTH) -> InertialState:
    a = el.a * 1e3
    e = el.e
    inc, raan, argp, M = (math.radians(x) for x in (el.i, el.raan, el.argp, el.M))
    E = _kepler_E(math.fmod(M, 2 * math.pi), e)
    cosE, sinE = math.cos(E), math.sin(E)
    fac = math.sqrt(1.0 - e * e)
    # perifocal position/velocity
    r_pf = np.array([a * (cosE - e), a * fac * sinE, 0.0])
    rn = a * (1.0 - e * cosE)
    v_pf = math.sqrt(mu * a) / rn * np.array([-sinE, fac * cosE, 0.0])
    cO, sO = math.cos(raan), math.sin(raan)
    ci, si = math.cos(inc), math.sin(inc)
    cw, sw = math.cos(argp), math.sin(argp)
    R = np.array(
        [
            [cO * cw - sO * sw * ci, -cO * sw - sO * cw * ci, sO * si],
            [sO * cw + cO * sw * ci, -sO * sw + cO * cw * ci, -cO * si],
            [sw * si, cw * si, ci],
        ]
    )
    return InertialState(epoch, R @ r_pf, R @ v_pf)


def state_to_elements(state: InertialState, mu: float = MU_EARTH) -> OrbitalElements:
    r, v = state.r, state.v
    rn = np.linalg.norm(r)
    h = np.cross(r, v)
    hn = np.linalg.norm(h)
    node = np.cross([0.0, 0.0, 1.0], h)
    nn = np.linalg.norm(node)
    evec = np.cross(v, h) / mu - r / rn
    e = np.linalg.norm(evec)
    energy = 0.5 * v @ v - mu / rn
    if energy >= 0:
        raise ValueError("state is not bound")
    a = -mu / (2.0 * energy)
    inc = math.acos(np.clip(h[2] / hn, -1.0, 1.0))
    # reference directions that stay defined for circular/equatorial orbits
    if nn > 1e-11 * hn:
        n_hat = node / nn
    else:
        n_hat = np.array([1.0, 0.0, 0.0])
    raan = math.atan2(n_hat[1], n_hat[0])
    m_hat = np.cross(h / hn, n_hat)
    if e > 1e-11:
        argp = math.atan2(evec @ m_hat, evec @ n_hat)
        p_hat = evec / e
    else:
        argp = 0.0
        p_hat = n_hat
    q_hat = np.cross(h / hn, p_hat)
    nu = math.atan2(r @ q_hat, r @ p_hat)
    E = 2.0 * math.atan2(math.sqrt(1 - e) * math.sin(nu / 2), math.sqrt(1 + e) * math.cos(nu / 2))
    M = E - e * math.sin(E)
    wrap = lambda x: math.degrees(x) % 360.0  # noqa: E731
    return OrbitalElements(float(a) / 1e3, float(e), math.degrees(inc), wrap(raan), wrap(argp), wrap(M))


# ---------------------------------------------------------------------------
# frames and forces


def vvlh_rotation(state: InertialState) -> np.ndarray:
    """VVLH-to-ECI rotation; columns are the X (toward velocity), Y (-normal), Z (nadir) axes."""
    r, v = state.r, state.v
    if np.linalg.norm(np.cross(r, v)) <= 1e-12 * np.linalg.norm(r) * np.linalg.norm(v):
        raise DegenerateFrameError("VVLH frame undefined for parallel r and v")
    return vvlh_matrix(r, v)


def thrust_active(policy: Optional[ManeuverPolicy], t: Epoch) -> bool:
    return policy is not None and policy.t_b < t <= policy.t_f


def acceleration(state: InertialState, cfg: ForceModelConfig, policy: Optional[ManeuverPolicy] = None) -> np.ndarray:
    acc = gravity(state.r, cfg.mu, cfg.j2, cfg.earth_radius, cfg.zonal_degree)
    if thrust_active(policy, state.epoch):
        acc = acc + vvlh_rotation(state) @ policy.u
    return acc


def gravity_jacobian(r: np.ndarray, cfg: ForceModelConfig) -> np.ndarray:
    """d(gravity)/dr, the lower-left block of the variational matrix."""
    return gravity_gradient(np.asarray(r, dtype=float), cfg.mu, cfg.j2, cfg.earth_radius, cfg.zonal_degree)


# ---------------------------------------------------------------------------
# propagation


def _thrust_args(policy: Optional[ManeuverPolicy]) -> np.ndarray:
    if policy is None:
        return np.empty(0)
    return np.array([policy.t_b, policy.t_f, *policy.u])


def _run(y0, t0, times, cfg, policy, sens_window, mode, rtol, atol):
    times = np.asarray(times, dtype=float)
    sens = np.empty(0) if sens_window is None else np.asarray(sens_window, dtype=float)
    try:
        out, _ = _backend.integrate(y0, float(t0), times, cfg.packed(), _thrust_args(policy), sens, mode, rtol, atol)
    except RuntimeError as exc:
        raise IntegrationError(str(exc)) from exc
    return out


def propagate_states(
    state: InertialState,
    cfg: ForceModelConfig,
    epochs: Sequence[float],
    policy: Optional[ManeuverPolicy] = None,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> np.ndarray:
    """Propagate to each of ``epochs`` and return an (n, 6) array.

    Epochs may lie on both sides of ``state.epoch``; each side is integrated
    separately outward from the initial state.
    """
    epochs = np.asarray(epochs, dtype=float)
    out = np.empty((len(epochs), 6))
    y0 = state.vector
    fwd = epochs >= state.epoch
    for mask, desc in ((fwd, False), (~fwd, True)):
        if not mask.any():
            continue
        idx = np.nonzero(mask)[0]
        order = idx[np.argsort(epochs[idx], kind="stable")]
        if desc:
            order = order[::-1]
        out[order] = _run(y0, state.epoch, epochs[order], cfg, policy, None, 0, rtol, atol)
    return out


def propagate(
    state: InertialState,
    cfg: ForceModelConfig,
    t_target: Epoch,
    policy: Optional[ManeuverPolicy] = None,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> InertialState:
    x = propagate_states(state, cfg, [t_target], policy, rtol, atol)[0]
    return InertialState.from_vector(t_target, x)


def apply_impulse(state: InertialState, imp: ImpulsiveManeuver) -> InertialState:
    if state.epoch != imp.t_m:
        raise ValueError(f"impulse epoch {imp.t_m} does not match state epoch {state.epoch}")
    return InertialState(state.epoch, state.r.copy(), state.v + imp.dv)


def propagate_variational_many(
    state: InertialState,
    cfg: ForceModelConfig,
    epochs: Sequence[float],
    sens_window: Optional[tuple[float, float]] = None,
    policy: Optional[ManeuverPolicy] = None,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """States (n,6), STMs (n,6,6) and sensitivities (n,6,3) relative to ``state.epoch``.

    ``epochs`` must be monotone and on one side of the initial epoch. The
    sensitivity forcing is active only inside ``sens_window``.
    """
    y0 = np.concatenate((state.vector, np.eye(6).ravel(), np.zeros(18)))
    out = _run(y0, state.epoch, epochs, cfg, policy, sens_window, 1, rtol, atol)
    return out[:, :6], out[:, 6:42].reshape(-1, 6, 6), out[:, 42:60].reshape(-1, 6, 3)


def propagate_variational(
    state: InertialState,
    cfg: ForceModelConfig,
    t_target: Epoch,
    sens_window: Optional[tuple[float, float]] = None,
    policy: Optional[ManeuverPolicy] = None,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> VariationalState:
    x, phi, S = propagate_variational_many(state, cfg, [t_target], sens_window, policy, rtol, atol)
    return VariationalState(InertialState.from_vector(t_target, x[0]), phi[0], S[0], state.epoch)


def stm_between(phi_k0: np.ndarray, phi_f0: np.ndarray) -> np.ndarray:
    """Phi(t_k, t_f) = Phi(t_k, t_0) Phi(t_f, t_0)^-1; broadcasts over leading axes of ``phi_k0``."""
    if np.linalg.cond(phi_f0) > 1e14:
        raise np.linalg.LinAlgError("state transition matrix is numerically singular")
    inv = np.linalg.inv(phi_f0)
    return phi_k0 @ inv


def sensitivity_between(S_f0: np.ndarray, phi_fb: np.ndarray, S_b0: np.ndarray) -> np.ndarray:
    """S(t_f, t_b) = S(t_f, t_0) - Phi(t_f, t_b) S(t_b, t_0)."""
    return S_f0 - phi_fb @ S_b0


@dataclass
class Trajectory:
    """An orbit defined by an initial state and optional maneuver.

    Used as the truth/observer ephemeris. ``states_at`` memoises results per
    epoch since the same observer epochs are queried repeatedly.
    """

    initial: InertialState
    cfg: ForceModelConfig
    policy: Optional[ManeuverPolicy] = None
    impulse: Optional[ImpulsiveManeuver] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def states_at(self, epochs) -> np.ndarray:
        epochs = np.atleast_1d(np.asarray(epochs, dtype=float))
        missing = np.array(sorted({float(t) for t in epochs} - self._cache.keys()))
        if len(missing):
            for t, x in zip(missing, self._propagate(missing)):
                self._cache[float(t)] = x
        return np.array([self._cache[float(t)] for t in epochs]).reshape(len(epochs), 6)

    def state_at(self, epoch: Epoch) -> InertialState:
        return InertialState.from_vector(epoch, self.states_at([epoch])[0])

    def _propagate(self, epochs: np.ndarray) -> np.ndarray:
        if self.impulse is None:
            return propagate_states(self.initial, self.cfg, epochs, self.policy)
        t_m = self.impulse.t_m
        if t_m < self.initial.epoch:
            raise ValueError("impulse precedes the trajectory's initial epoch")
        out = np.empty((len(epochs), 6))
        before = epochs <= t_m
        if before.any():
            out[before] = propagate_states(self.initial, self.cfg, epochs[before], self.policy)
        if (~before).any():
            pre = propagate(self.initial, self.cfg, t_m, self.policy)
            post = apply_impulse(pre, self.impulse)
            out[~before] = propagate_states(post, self.cfg, epochs[~before], self.policy)
        return out
