"""Scenario files, tracklet/ephemeris CSV persistence and run records.

Scenario files are YAML. Validation errors carry ``file:line:column`` so a
bad entry can be found without guessing. See ``docs/scenario_format.md``
for the grammar.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator, Optional, Sequence, Union

import numpy as np
import yaml

from .constants import ARCSEC, J2_EARTH, MU_EARTH, R_EARTH
from .dynamics import (
    ForceModelConfig,
    ImpulsiveManeuver,
    InertialState,
    ManeuverPolicy,
    OrbitalElements,
    Trajectory,
    elements_to_state,
)
from .observation import AngularMeasurement, Tracklet, TrackletWindow, simulate_tracklets


class ScenarioError(ValueError):
    """Malformed scenario or data file; the message names the location."""


# ---------------------------------------------------------------------------
# time handling


def parse_utc(value: Union[str, datetime]) -> datetime:
    """ISO-8601 UTC instant; a trailing Z or a missing offset both mean UTC."""
    if isinstance(value, datetime):
        dt = value
    else:
        text = str(value).strip().replace(" ", "T", 1)
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def utc_to_seconds(value: Union[str, datetime], reference: datetime) -> float:
    """Seconds after ``reference``; leap seconds are not modelled."""
    return (parse_utc(value) - reference).total_seconds()


def seconds_to_utc(seconds: float, reference: datetime) -> str:
    from datetime import timedelta

    dt = reference + timedelta(seconds=float(seconds))
    return dt.strftime("%Y-%m-%dT%H:%M:%S.%f")[:-4] + "Z"


# ---------------------------------------------------------------------------
# YAML node access with positions


class _Node:
    """Thin wrapper over a composed YAML node that reports its location."""

    _ctor = yaml.constructor.SafeConstructor()

    def __init__(self, node: yaml.Node, source: str, path: str, key: Optional[yaml.Node] = None):
        self.node = node
        self.source = source
        self.path = path
        self.key = key  # the mapping key this value sits under

    def where(self) -> str:
        m = self.node.start_mark
        return f"{self.source}:{m.line + 1}:{m.column + 1}"

    def fail(self, msg: str):
        raise ScenarioError(f"{self.where()}: {self.path}: {msg}")

    def mapping(self) -> dict[str, _Node]:
        if not isinstance(self.node, yaml.MappingNode):
            self.fail("expected a mapping")
        out = {}
        for k, v in self.node.value:
            key = self._ctor.construct_object(k, deep=True)
            if key in out:
                _Node(k, self.source, self.path).fail(f"duplicate key {key!r}")
            out[str(key)] = _Node(v, self.source, f"{self.path}.{key}" if self.path else str(key), k)
        return out

    def sequence(self) -> list[_Node]:
        if not isinstance(self.node, yaml.SequenceNode):
            self.fail("expected a list")
        return [_Node(v, self.source, f"{self.path}[{i}]") for i, v in enumerate(self.node.value)]

    def value(self) -> Any:
        return self._ctor.construct_object(self.node, deep=True)

    def number(self, positive: bool = False, nonneg: bool = False) -> float:
        v = self.value()
        if isinstance(v, str) and self.node.style is None:
            # YAML 1.1 reads 3.986e14 (unsigned exponent) as a string
            try:
                v = float(v)
            except ValueError:
                pass
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(f"expected a number, got {v!r}")
        v = float(v)
        if not np.isfinite(v):
            self.fail("must be finite")
        if positive and v <= 0:
            self.fail("must be positive")
        if nonneg and v < 0:
            self.fail("must be non-negative")
        return v

    def integer(self) -> int:
        v = self.value()
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(f"expected an integer, got {v!r}")
        return int(v)

    def text(self) -> str:
        v = self.value()
        if not isinstance(v, str):
            self.fail(f"expected a string, got {v!r}")
        return v

    def vector3(self) -> np.ndarray:
        items = self.sequence()
        if len(items) != 3:
            self.fail(f"expected 3 components, got {len(items)}")
        return np.array([it.number() for it in items])

    def instant(self) -> datetime:
        v = self.value()
        try:
            return parse_utc(v)
        except (TypeError, ValueError):
            self.fail(f"not a UTC timestamp: {v!r}")


def _take(m: dict[str, _Node], parent: _Node, key: str, required: bool = True) -> Optional[_Node]:
    if key in m:
        return m[key]
    if required:
        parent.fail(f"missing required key {key!r}")
    return None


def _check_keys(m: dict[str, _Node], parent: _Node, allowed: set[str]) -> None:
    for k, node in m.items():
        if k not in allowed:
            _Node(node.key or node.node, node.source, node.path).fail(f"unknown key {k!r}; expected one of {sorted(allowed)}")


# ---------------------------------------------------------------------------
# scenario model


@dataclass(frozen=True)
class WindowSpec:
    start: float
    duration: float
    source: str = "approx"  # "exact" for a fixed offset from the burn, "approx" for a placed pass
    note: str = ""

    def window(self) -> TrackletWindow:
        return TrackletWindow(self.start, self.duration)


@dataclass(frozen=True)
class DetectionSpec:
    post_tracklets: int = 3
    chi_max: float = 3.38
    ball_radius: float = 10e3
    threshold: float = 1.2
    max_duration: float = 3600.0
    midpoint_step: float = 60.0
    duration_step: float = 60.0
    impulse_step: float = 60.0
    correlation_step: float = 60.0
    covariance_floor: float = 50.0
    last_pre_epoch: Optional[float] = None


@dataclass
class Scenario:
    name: str
    reference: datetime
    force: ForceModelConfig
    observer_id: str
    observer_elements: OrbitalElements
    target_id: str
    target_elements: OrbitalElements
    maneuver: Union[ManeuverPolicy, ImpulsiveManeuver, None]
    sigma: float  # rad
    cadence: float
    seed: int
    windows: tuple[WindowSpec, ...]
    detection: DetectionSpec = field(default_factory=DetectionSpec)
    digest: str = ""
    source: str = "<memory>"

    # -- derived objects
    def observer(self) -> Trajectory:
        return Trajectory(elements_to_state(self.observer_elements, 0.0, mu=self.force.mu), self.force)

    def truth(self) -> Trajectory:
        init = elements_to_state(self.target_elements, 0.0, mu=self.force.mu)
        if isinstance(self.maneuver, ManeuverPolicy):
            return Trajectory(init, self.force, policy=self.maneuver)
        if isinstance(self.maneuver, ImpulsiveManeuver):
            return Trajectory(init, self.force, impulse=self.maneuver)
        return Trajectory(init, self.force)

    def simulate(self, seed: Optional[int] = None, sigma: Optional[float] = None) -> list[Tracklet]:
        return simulate_tracklets(
            [w.window() for w in self.windows],
            self.truth(),
            self.observer(),
            self.sigma if sigma is None else sigma,
            self.cadence,
            self.seed if seed is None else seed,
            observer_id=self.observer_id,
        )

    @property
    def maneuver_start(self) -> Optional[float]:
        if isinstance(self.maneuver, ManeuverPolicy):
            return self.maneuver.t_b
        if isinstance(self.maneuver, ImpulsiveManeuver):
            return self.maneuver.t_m
        return None

    @property
    def t0(self) -> float:
        """Last pre-maneuver observation epoch."""
        if self.detection.last_pre_epoch is not None:
            return self.detection.last_pre_epoch
        start = self.maneuver_start
        if start is None:
            raise ScenarioError(f"{self.source}: detection.last_pre_epoch_s is required without a maneuver")
        ends = [w.start + w.duration for w in self.windows if w.start + w.duration < start]
        if not ends:
            raise ScenarioError(f"{self.source}: no tracklet window precedes the maneuver")
        return max(ends)

    def pre_state(self) -> InertialState:
        """The pre-maneuver orbit at t0, taken as error free."""
        return self.truth().state_at(self.t0)

    def split(self, tracklets: Sequence[Tracklet]) -> tuple[list[Tracklet], list[Tracklet]]:
        t0 = self.t0
        pre = [t for t in tracklets if t.end <= t0]
        post = [t for t in tracklets if t.start > t0]
        return pre, post


_TOP = {"name", "reference_epoch", "force_model", "observer", "target", "maneuver", "measurements", "detection"}


def _elements(node: _Node) -> OrbitalElements:
    m = node.mapping()
    keys = ("a_km", "e", "i_deg", "raan_deg", "argp_deg", "M_deg")
    _check_keys(m, node, set(keys))
    vals = [_take(m, node, k).number() for k in keys]
    try:
        return OrbitalElements(*vals)
    except ValueError as exc:
        node.fail(str(exc))


def _body(node: _Node) -> tuple[str, OrbitalElements]:
    m = node.mapping()
    _check_keys(m, node, {"id", "elements"})
    return _take(m, node, "id").text(), _elements(_take(m, node, "elements"))


def _force(node: Optional[_Node]) -> ForceModelConfig:
    if node is None:
        return ForceModelConfig()
    m = node.mapping()
    _check_keys(m, node, {"zonal_degree", "mu", "j2", "earth_radius"})
    deg = m["zonal_degree"].integer() if "zonal_degree" in m else 2
    if deg not in (0, 2):
        m["zonal_degree"].fail("zonal_degree must be 0 or 2")
    return ForceModelConfig(
        mu=m["mu"].number(positive=True) if "mu" in m else MU_EARTH,
        zonal_degree=deg,
        j2=m["j2"].number() if "j2" in m else J2_EARTH,
        earth_radius=m["earth_radius"].number(positive=True) if "earth_radius" in m else R_EARTH,
    )


def _epoch(node: _Node, ref: datetime) -> float:
    """Either seconds after the reference or a UTC timestamp."""
    v = node.value()
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    return (node.instant() - ref).total_seconds()


def _maneuver(node: Optional[_Node], ref: datetime):
    if node is None:
        return None
    m = node.mapping()
    kind = _take(m, node, "kind").text()
    if kind == "none":
        _check_keys(m, node, {"kind"})
        return None
    if kind == "finite":
        _check_keys(m, node, {"kind", "start", "end", "u_vvlh_mps2", "note"})
        t_b = _epoch(_take(m, node, "start"), ref)
        t_f = _epoch(_take(m, node, "end"), ref)
        if not t_b < t_f:
            m["end"].fail("burn end must follow burn start")
        return ManeuverPolicy(t_b, t_f, _take(m, node, "u_vvlh_mps2").vector3())
    if kind == "impulsive":
        _check_keys(m, node, {"kind", "epoch", "dv_eci_mps", "note"})
        return ImpulsiveManeuver(_epoch(_take(m, node, "epoch"), ref), _take(m, node, "dv_eci_mps").vector3())
    m["kind"].fail(f"unknown maneuver kind {kind!r}; expected finite, impulsive or none")


def _windows(node: _Node) -> tuple[WindowSpec, ...]:
    out = []
    for item in node.sequence():
        m = item.mapping()
        _check_keys(m, item, {"start_s", "duration_s", "source", "note"})
        w = WindowSpec(
            _take(m, item, "start_s").number(nonneg=True),
            _take(m, item, "duration_s").number(positive=True),
            m["source"].text() if "source" in m else "approx",
            m["note"].text() if "note" in m else "",
        )
        if w.source not in ("exact", "approx"):
            m["source"].fail("source must be 'exact' or 'approx'")
        if out and w.start <= out[-1].start + out[-1].duration:
            item.fail("windows must be increasing and non-overlapping")
        out.append(w)
    if not out:
        node.fail("at least one window is required")
    return tuple(out)


def _detection(node: Optional[_Node], ref: datetime) -> DetectionSpec:
    if node is None:
        return DetectionSpec()
    m = node.mapping()
    names = {
        "post_tracklets": "post_tracklets",
        "chi_max": "chi_max",
        "ball_radius_m": "ball_radius",
        "threshold": "threshold",
        "max_duration_s": "max_duration",
        "midpoint_step_s": "midpoint_step",
        "duration_step_s": "duration_step",
        "impulse_step_s": "impulse_step",
        "correlation_step_s": "correlation_step",
        "covariance_floor_m": "covariance_floor",
        "last_pre_epoch_s": "last_pre_epoch",
    }
    _check_keys(m, node, set(names))
    kw = {}
    for key, attr in names.items():
        if key not in m:
            continue
        if key == "post_tracklets":
            kw[attr] = m[key].integer()
            if kw[attr] < 2:
                m[key].fail("at least two post-maneuver tracklets are needed")
        elif key == "last_pre_epoch_s":
            kw[attr] = _epoch(m[key], ref)
        else:
            kw[attr] = m[key].number(positive=True)
    return DetectionSpec(**kw)


def loads(text: str, source: str = "<string>") -> Scenario:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        loc = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        raise ScenarioError(f"{loc}: {exc.problem}") from exc
    if root is None:
        raise ScenarioError(f"{source}: empty scenario")
    top = _Node(root, source, "")
    m = top.mapping()
    _check_keys(m, top, _TOP)
    ref = _take(m, top, "reference_epoch").instant()
    force = _force(m.get("force_model"))
    obs_id, obs_el = _body(_take(m, top, "observer"))
    tgt_id, tgt_el = _body(_take(m, top, "target"))
    man = _maneuver(m.get("maneuver"), ref)
    meas = _take(m, top, "measurements")
    mm = meas.mapping()
    _check_keys(mm, meas, {"sigma_arcsec", "cadence_s", "seed", "windows"})
    sigma = _take(mm, meas, "sigma_arcsec").number(nonneg=True) * ARCSEC
    cadence = mm["cadence_s"].number(positive=True) if "cadence_s" in mm else 1.0
    seed = mm["seed"].integer() if "seed" in mm else 0
    windows = _windows(_take(mm, meas, "windows"))
    det = _detection(m.get("detection"), ref)
    return Scenario(
        name=_take(m, top, "name").text(),
        reference=ref,
        force=force,
        observer_id=obs_id,
        observer_elements=obs_el,
        target_id=tgt_id,
        target_elements=tgt_el,
        maneuver=man,
        sigma=sigma,
        cadence=cadence,
        seed=seed,
        windows=windows,
        detection=det,
        digest=hashlib.sha256(text.encode()).hexdigest(),
        source=source,
    )


def load(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from exc
    return loads(text, str(path))


def builtin(name: str) -> Path:
    """Path of a scenario shipped with the package (e.g. ``sentinel6a``)."""
    p = Path(__file__).parent / "scenarios" / f"{name}.yaml"
    if not p.exists():
        raise ScenarioError(f"no built-in scenario {name!r}; available: {', '.join(available())}")
    return p


def available() -> list[str]:
    return sorted(p.stem for p in (Path(__file__).parent / "scenarios").glob("*.yaml"))


def resolve(name_or_path: str) -> Scenario:
    p = Path(name_or_path)
    return load(p if p.exists() or p.suffix else builtin(name_or_path))


# ---------------------------------------------------------------------------
# files


@contextlib.contextmanager
def atomic_write(path: Union[str, Path], mode: str = "w") -> Iterator:
    """Write to a temporary sibling and rename over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


TRACKLET_HEADER = ["epoch_s", "alpha_rad", "delta_rad", "sigma_rad", "tracklet_id", "observer_id"]
EPHEMERIS_HEADER = ["epoch_s", "x_m", "y_m", "z_m", "vx_mps", "vy_mps", "vz_mps"]


def write_tracklets(path, tracklets: Sequence[Tracklet]) -> None:
    with atomic_write(path) as fh:
        w = csv.writer(fh)
        w.writerow(TRACKLET_HEADER)
        for trk in tracklets:
            for m in trk.measurements:
                w.writerow([repr(m.epoch), repr(m.alpha), repr(m.delta), repr(m.sigma), trk.id, trk.observer_id])


def read_tracklets(path) -> list[Tracklet]:
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from exc
    groups: dict[tuple[str, str], list[AngularMeasurement]] = {}
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRACKLET_HEADER:
            raise ScenarioError(f"{path}:1: expected header {','.join(TRACKLET_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TRACKLET_HEADER):
                raise ScenarioError(f"{path}:{lineno}: expected {len(TRACKLET_HEADER)} fields, got {len(row)}")
            try:
                t, a, d, s = (float(x) for x in row[:4])
                meas = AngularMeasurement(t, a, d, s)
            except ValueError as exc:
                raise ScenarioError(f"{path}:{lineno}: {exc}") from exc
            groups.setdefault((row[4].strip(), row[5].strip()), []).append(meas)
    out = []
    for (tid, oid), ms in groups.items():
        try:
            out.append(Tracklet(tid, tuple(ms), oid))
        except ValueError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
    return sorted(out, key=lambda t: t.start)


def write_ephemeris(path, epochs: np.ndarray, states: np.ndarray) -> None:
    with atomic_write(path) as fh:
        w = csv.writer(fh)
        w.writerow(EPHEMERIS_HEADER)
        for t, x in zip(epochs, states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x])


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
