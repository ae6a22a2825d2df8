"""Orbit-to-orbit correlation by Mahalanobis distance.

The strict test asks whether two position estimates coincide within their
combined covariance. The relaxed test first lets the second position move
anywhere inside a ball of radius ``d`` and reports the smallest distance
that remains; this tolerates the offset a finite burn leaves between the
post-maneuver orbit and any impulsive twin of it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constants import CHI_MAX_3D
from .dynamics import Epoch, ForceModelConfig, InertialState, propagate_variational_many


class CovarianceError(ValueError):
    """Combined covariance is not symmetric positive definite."""


class RootFindingError(RuntimeError):
    pass


@dataclass(frozen=True)
class PositionWithCovariance:
    epoch: Epoch
    r: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, float).reshape(3))
        object.__setattr__(self, "P", np.asarray(self.P, float).reshape(3, 3))


def _combined(a: PositionWithCovariance, b: PositionWithCovariance):
    if a.epoch != b.epoch:
        raise ValueError("positions must share an epoch")
    P = a.P + b.P
    if not np.allclose(P, P.T, rtol=1e-10, atol=0.0):
        raise CovarianceError("combined covariance is not symmetric")
    return b.r - a.r, 0.5 * (P + P.T)


def mahalanobis(a: PositionWithCovariance, b: PositionWithCovariance) -> float:
    diff, P = _combined(a, b)
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError("combined covariance is not positive definite") from exc
    w = np.linalg.solve(L, diff)
    return float(math.sqrt(w @ w))


def _secular_root(a2: np.ndarray, lam: np.ndarray, d2: float) -> float:
    """Positive root of sum(a_i^2 / (1 + xi lam_i)^2) = d^2.

    The left side is convex and strictly decreasing for xi > 0 when
    sum(a_i^2) > d^2, so Newton iterates started left of the root climb
    monotonically onto it. Bisection on the doubled bracket is the backstop.
    """

    def f(xi):
        return float(np.sum(a2 / (1.0 + xi * lam) ** 2) - d2)

    def fprime(xi):
        return float(np.sum(-2.0 * a2 * lam / (1.0 + xi * lam) ** 3))

    hi = 1.0 / lam.max()
    for _ in range(2000):
        if f(hi) < 0:
            break
        hi *= 2.0
    else:
        raise RootFindingError(f"could not bracket the multiplier (hi={hi:.3e}, f={f(hi):.3e})")
    lo = 0.0
    xi = 0.0
    tol = 1e-12 * d2
    for _ in range(200):
        fx = f(xi)
        if abs(fx) < tol:
            return xi
        if fx > 0:
            lo = max(lo, xi)
        else:
            hi = min(hi, xi)
        step = xi - fx / fprime(xi)
        xi = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * hi:
            return xi
    raise RootFindingError(f"multiplier iteration did not converge in bracket [{lo:.6e}, {hi:.6e}]")


def mahalanobis_relaxed(a: PositionWithCovariance, b: PositionWithCovariance, d: float) -> float:
    """Smallest Mahalanobis distance after shifting ``b`` by any vector of length <= d."""
    if d < 0:
        raise ValueError("ball radius must be non-negative")
    if d == 0:
        return mahalanobis(a, b)
    diff, P = _combined(a, b)
    if diff @ diff <= d * d:
        return 0.0
    lam, eta = np.linalg.eigh(P)
    if lam.min() <= 0:
        raise CovarianceError("combined covariance is not positive definite")
    coef = eta.T @ diff
    a2 = coef * coef
    xi = _secular_root(a2, lam, d * d)
    # (a_i - b_i)^2 / lam_i with b_i = a_i / (1 + xi lam_i), written without cancellation
    chi2 = np.sum(a2 * xi * xi * lam / (1.0 + xi * lam) ** 2)
    return float(math.sqrt(chi2))


@dataclass
class OrbitEstimate:
    """A state with 6x6 covariance, mapped to other epochs through the STM."""

    state: InertialState
    covariance: np.ndarray
    cfg: ForceModelConfig
    position_floor: float = 0.0  # m, added per axis as floor**2

    def positions_at(self, epochs: Sequence[float]) -> list[PositionWithCovariance]:
        epochs = np.asarray(epochs, dtype=float)
        out: list[Optional[PositionWithCovariance]] = [None] * len(epochs)
        t0 = self.state.epoch
        floor = self.position_floor**2 * np.eye(3)
        for mask, desc in ((epochs >= t0, False), (epochs < t0, True)):
            idx = np.nonzero(mask)[0]
            if not len(idx):
                continue
            order = idx[np.argsort(epochs[idx], kind="stable")]
            if desc:
                order = order[::-1]
            x, phi, _ = propagate_variational_many(self.state, self.cfg, epochs[order])
            for j, k in enumerate(order):
                P = phi[j] @ self.covariance @ phi[j].T
                P = 0.5 * (P + P.T)
                out[k] = PositionWithCovariance(float(epochs[k]), x[j, :3], P[:3, :3] + floor)
        return out


@dataclass
class CorrelationReport:
    epochs: np.ndarray
    chi_strict: np.ndarray
    chi_max: float = CHI_MAX_3D
    d: Optional[float] = None
    chi_relaxed: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def correlated_strict(self) -> bool:
        return bool(np.min(self.chi_strict) <= self.chi_max)

    @property
    def correlated_relaxed(self) -> bool:
        return self.chi_relaxed is not None and bool(np.min(self.chi_relaxed) <= self.chi_max)

    @property
    def correlated(self) -> bool:
        return self.correlated_strict or self.correlated_relaxed

    def sub_threshold_epochs(self, gate: str = "auto") -> np.ndarray:
        """Epochs where the chosen gate passes; ``auto`` prefers strict and falls back to relaxed."""
        if gate == "auto":
            gate = "strict" if self.correlated_strict or self.chi_relaxed is None else "relaxed"
        chi = self.chi_strict if gate == "strict" else self.chi_relaxed
        if chi is None:
            raise ValueError("relaxed series not computed")
        return self.epochs[chi <= self.chi_max]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch_s", "chi_strict", "chi_relaxed"])
            for i, t in enumerate(self.epochs):
                rel = "" if self.chi_relaxed is None else f"{self.chi_relaxed[i]:.9g}"
                w.writerow([f"{t:.3f}", f"{self.chi_strict[i]:.9g}", rel])


def correlate_positions(
    first: Sequence[PositionWithCovariance],
    second: Sequence[PositionWithCovariance],
    chi_max: float = CHI_MAX_3D,
    d: Optional[float] = None,
) -> CorrelationReport:
    epochs = np.array([p.epoch for p in first])
    strict = np.array([mahalanobis(a, b) for a, b in zip(first, second)])
    relaxed = None
    if d is not None:
        relaxed = np.array([mahalanobis_relaxed(a, b, d) for a, b in zip(first, second)])
    return CorrelationReport(epochs, strict, chi_max, d, relaxed)


def correlate_orbits(
    orbit1: OrbitEstimate,
    orbit2: OrbitEstimate,
    epochs: Sequence[float],
    chi_max: float = CHI_MAX_3D,
    d: Optional[float] = None,
) -> CorrelationReport:
    """Strict (and optionally relaxed) Mahalanobis series over ``epochs``."""
    epochs = np.asarray(epochs, dtype=float)
    if len(epochs) == 0:
        raise ValueError("empty epoch grid")
    return correlate_positions(orbit1.positions_at(epochs), orbit2.positions_at(epochs), chi_max, d)


def epoch_grid(t_start: float, t_end: float, step: float = 60.0) -> np.ndarray:
    """Regular grid over [t_start, t_end] that always includes both ends."""
    if t_end < t_start:
        raise ValueError("grid end precedes start")
    n = int(math.floor((t_end - t_start) / step + 1e-9))
    grid = t_start + step * np.arange(n + 1)
    if grid[-1] < t_end:
        grid = np.append(grid, t_end)
    return grid
