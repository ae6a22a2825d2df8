"""Clohessy-Wiltshire relative motion about a circular chief.

Axis convention follows the linearised equations used here: x carries the
3n^2 stiffness and couples to z through the 2n terms, while y is the
orbit-normal channel and evolves on its own as a harmonic oscillator.

    x'' - 2n z' - 3n^2 x = u_x
    y'' + n^2 y         = u_y
    z'' + 2n x'         = u_z
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp


@dataclass(frozen=True)
class RelativeState:
    dr: np.ndarray
    dv: np.ndarray
    n: float

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError("mean motion must be positive")
        object.__setattr__(self, "dr", np.asarray(self.dr, dtype=float).reshape(3))
        object.__setattr__(self, "dv", np.asarray(self.dv, dtype=float).reshape(3))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate((self.dr, self.dv))


def _rhs(t, s, n, u):
    x, y, z, vx, vy, vz = s
    return [vx, vy, vz, 2 * n * vz + 3 * n * n * x + u[0], -n * n * y + u[1], -2 * n * vx + u[2]]


def cw_trajectory(rel: RelativeState, u, times, rtol: float = 1e-13, atol: float = 1e-13) -> np.ndarray:
    """Numerically integrated relative states (len(times), 6) for times >= 0 after ``rel``."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("elapsed times must be non-negative")
    u = np.asarray(u, dtype=float).reshape(3)
    t_end = float(times.max()) if len(times) else 0.0
    if t_end == 0.0:
        return np.tile(rel.vector, (len(times), 1))
    sol = solve_ivp(
        _rhs, (0.0, t_end), rel.vector, method="DOP853", t_eval=times, args=(rel.n, u), rtol=rtol, atol=atol
    )
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y.T


def cw_propagate(rel: RelativeState, u, dt: float, **tol) -> RelativeState:
    s = cw_trajectory(rel, u, [dt], **tol)[0]
    return RelativeState(s[:3], s[3:], rel.n)


def cw_normal_free(ry0, vy0, n: float, dt):
    """Unforced normal-channel motion after ``dt`` seconds."""
    c, s = np.cos(n * dt), np.sin(n * dt)
    return vy0 / n * s + ry0 * c, vy0 * c - n * ry0 * s


def cw_normal_thrust(ry0, vy0, uy, n: float, dt):
    """Normal-channel motion under constant normal acceleration ``uy``."""
    c, s = np.cos(n * dt), np.sin(n * dt)
    k = uy / (n * n)
    return vy0 / n * s + (ry0 - k) * c + k, vy0 * c - (n * ry0 - uy / n) * s


def thrust_then_coast(uy: float, start: float, duration: float, n: float, t):
    """Normal-channel state at time(s) ``t`` for a deputy that leaves the chief
    at rest, thrusts on [start, start + duration] and coasts afterwards."""
    t = np.asarray(t, dtype=float)
    tau = np.clip(t - start, 0.0, duration)
    ry, vy = cw_normal_thrust(0.0, 0.0, uy, n, tau)
    coast = np.clip(t - start - duration, 0.0, None)
    return cw_normal_free(ry, vy, n, coast)


def normal_transfer_policy(ry: float, vy: float, n: float, t_end: float, duration: float) -> tuple[float, float]:
    """(u_y, start) of a from-rest burn of the given length that reaches (ry, vy) at ``t_end``.

    In the scaled plane c = n*ry + i*vy free motion is a clockwise rotation
    at rate n, and a burn from rest ends on a circle through the origin.
    Matching the radius fixes the thrust level; matching the angle fixes
    when the burn starts. The latest start not after t_end - duration is
    returned.
    """
    target = complex(n * ry, vy)
    half = 0.5 * n * duration
    if abs(math.sin(half)) < 1e-15:
        raise ValueError("a whole number of periods of thrust returns to rest")
    uy = abs(target) * n / (2.0 * math.sin(half))
    c_end = complex(uy / n * (1.0 - math.cos(2 * half)), uy / n * math.sin(2 * half))
    lag = (np.angle(c_end) - np.angle(target)) % (2 * math.pi)  # coast rotation needed, in radians
    start = t_end - duration - lag / n
    return float(uy), float(start)


def write_phase_plane_csv(path, t, ry, vy, label: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "dr_y_m", "ddr_y_mps", "label"])
        for a, b, c in zip(np.atleast_1d(t), np.atleast_1d(ry), np.atleast_1d(vy)):
            w.writerow([f"{a:.6f}", f"{b:.12g}", f"{c:.12g}", label])
