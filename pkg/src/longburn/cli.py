"""Command-line entry point: ``longburn <command> ...``.

Exit codes: 0 success, 2 no correlation, 3 detection failed, 4 input error.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from ._backend import BACKEND
from .detection import MODE_NONE, GridSpec, NoCorrelationError
from .experiments import DIRECTIONS, divergence_study, observability_map, write_divergence_csv
from .scenario import (
    ScenarioError,
    atomic_write,
    read_tracklets,
    resolve,
    seconds_to_utc,
    write_ephemeris,
    write_tracklets,
)

EXIT_OK = 0
EXIT_NO_CORRELATION = 2
EXIT_DETECTION_FAILED = 3
EXIT_INPUT = 4


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


class RunRecorder:
    """Collects what a command wrote and stores it as run.json in the output directory."""

    def __init__(self, out: Path, argv: Sequence[str], scenario_digest: Optional[str] = None):
        self.out = out
        self.argv = list(argv)
        self.digest = scenario_digest
        self.outputs: list[str] = []
        self.t0 = time.perf_counter()

    def add(self, path: Path) -> Path:
        self.outputs.append(path.name)
        return path

    def write(self, status: int, extra: Optional[dict] = None) -> None:
        import scipy

        rec = {
            "command": ["longburn", *self.argv],
            "scenario_sha256": self.digest,
            "outputs": self.outputs,
            "exit_code": status,
            "wall_time_s": round(time.perf_counter() - self.t0, 3),
            "versions": {
                "longburn": __version__,
                "kernel_backend": BACKEND,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
        }
        if extra:
            rec.update(extra)
        with atomic_write(self.out / "run.json") as fh:
            json.dump(rec, fh, indent=2)


def _load_tracklets(args, scenario):
    if args.tracklets:
        return read_tracklets(args.tracklets)
    return scenario.simulate(seed=args.seed)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, argv) -> int:
    sc = resolve(args.scenario)
    out = Path(args.out)
    rec = RunRecorder(out, argv, sc.digest)
    tracklets = sc.simulate(seed=args.seed)
    write_tracklets(rec.add(out / "tracklets.csv"), tracklets)
    span = max(w.start + w.duration for w in sc.windows)
    epochs = np.arange(0.0, span + args.truth_step, args.truth_step)
    write_ephemeris(rec.add(out / "truth.csv"), epochs, sc.truth().states_at(epochs))
    pre, post = sc.split(tracklets)
    print(f"{sc.name}: {len(tracklets)} tracklets ({len(pre)} pre, {len(post)} post) -> {out}")
    rec.write(EXIT_OK, {"tracklets": len(tracklets), "pre": len(pre), "post": len(post)})
    return EXIT_OK


def cmd_correlate(args, argv) -> int:
    from .pipeline import correlate

    sc = resolve(args.scenario)
    out = Path(args.out)
    rec = RunRecorder(out, argv, sc.digest)
    tracklets = _load_tracklets(args, sc)
    res = correlate(sc, tracklets, args.post, ball_radius=args.d, chi_max=args.chi_max)
    out.mkdir(parents=True, exist_ok=True)
    res.report.to_csv(rec.add(out / "correlation.csv"))
    rep = res.report
    verdict = {
        "gate": res.gate,
        "correlated": res.correlated,
        "min_chi_strict": float(rep.chi_strict.min()),
        "min_chi_relaxed": float(rep.chi_relaxed.min()),
        "chi_max": rep.chi_max,
        "ball_radius_m": rep.d,
        "post_fit_J": res.fit.J,
        "t_0_s": res.t_0,
        "t_1_s": res.t_1,
    }
    with atomic_write(rec.add(out / "verdict.json")) as fh:
        json.dump(verdict, fh, indent=2)
    print(
        f"strict min chi {verdict['min_chi_strict']:.3f}, relaxed min chi {verdict['min_chi_relaxed']:.3f} "
        f"(gate {rep.chi_max}): {'correlated via ' + res.gate if res.correlated else 'not correlated'}"
    )
    status = EXIT_OK if res.correlated else EXIT_NO_CORRELATION
    rec.write(status, verdict)
    return status


def cmd_detect(args, argv) -> int:
    from .pipeline import run_detection

    sc = resolve(args.scenario)
    out = Path(args.out)
    rec = RunRecorder(out, argv, sc.digest)
    tracklets = _load_tracklets(args, sc)
    det = sc.detection
    grid = GridSpec(
        args.mid_step or det.midpoint_step,
        args.dur_step or det.duration_step,
        args.max_duration or det.max_duration,
    )
    try:
        outcome = run_detection(
            sc,
            tracklets,
            args.mode,
            n_post=args.post,
            grid=grid,
            threshold=args.threshold,
            impulse_step=args.impulse_step,
            workers=args.workers,
        )
    except NoCorrelationError as exc:
        print(f"no correlation: {exc}", file=sys.stderr)
        rec.write(EXIT_NO_CORRELATION, {"error": str(exc)})
        return EXIT_NO_CORRELATION
    result = outcome.result
    out.mkdir(parents=True, exist_ok=True)
    result.to_csv(rec.add(out / "candidates.csv"))
    summary = result.summary()
    summary["attempts"] = [a.kind for a in outcome.attempts]
    if result.selected is not None:
        summary["tb_utc"] = seconds_to_utc(result.selected.t_b, sc.reference)
        summary["tf_utc"] = seconds_to_utc(result.selected.t_f, sc.reference)
    with atomic_write(rec.add(out / "summary.json")) as fh:
        json.dump(summary, fh, indent=2)
    if result.mode == MODE_NONE:
        print(f"detection failed: no candidate with J <= {result.threshold} ({len(result.candidates)} evaluated)")
        rec.write(EXIT_DETECTION_FAILED, {"mode": result.mode})
        return EXIT_DETECTION_FAILED
    s = result.selected
    print(
        f"{result.mode}: dV {s.delta_v:.4f} m/s, start {summary['tb_utc']}, end {summary['tf_utc']}, J {s.J:.3f}"
    )
    rec.write(EXIT_OK, {"mode": result.mode})
    return EXIT_OK


def cmd_divergence(args, argv) -> int:
    out = Path(args.out)
    rec = RunRecorder(out.parent, argv)
    tables = [
        divergence_study(d, args.accel, args.durations, args.horizon, args.cadence, args.altitude)
        for d in args.direction
    ]
    out.parent.mkdir(parents=True, exist_ok=True)
    write_divergence_csv(rec.add(out), tables)
    for tab in tables:
        vals = ", ".join(f"{d:.0f} s: {m:.1f} m" for d, m in zip(tab.durations, tab.mean_difference))
        print(f"{tab.direction} ({tab.accel:g} m/s^2): {vals}")
    rec.write(EXIT_OK)
    return EXIT_OK


def cmd_observability(args, argv) -> int:
    out = Path(args.out)
    rec = RunRecorder(out.parent, argv)
    grid = observability_map(
        args.direction,
        args.accel,
        args.tb,
        args.duration,
        (args.span_start, args.span_end),
        args.cadence,
        args.step,
        args.half_width,
        args.altitude,
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    grid.to_csv(rec.add(out))
    i, j = grid.global_minimum()
    print(
        f"{args.direction}: global minimum {grid.rms[i, j]:.3g} m at t_b {grid.tb_axis[i] - args.tb:+.0f} s, "
        f"t_f {grid.tf_axis[j] - args.tb - args.duration:+.0f} s relative to truth"
    )
    rec.write(EXIT_OK)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="longburn",
        description="Detect and characterise long-duration constant-thrust maneuvers from angle-only tracklets.",
        epilog="Exit codes: 0 success, 2 no correlation, 3 detection failed, 4 input error.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp, with_tracklets=True):
        sp.add_argument("scenario", help="scenario YAML path or built-in name (sentinel3a, sentinel6a, ...)")
        sp.add_argument("--out", default=".", help="output directory (default: current)")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario noise seed")
        if with_tracklets:
            sp.add_argument("--tracklets", help="tracklet CSV to use instead of simulating from the scenario")
            sp.add_argument("--post", type=int, default=None, help="number of post-maneuver tracklets to use")

    sp = sub.add_parser("simulate", help="generate tracklets and the truth ephemeris for a scenario")
    scenario_args(sp, with_tracklets=False)
    sp.add_argument("--truth-step", type=float, default=60.0, help="truth ephemeris sampling [s] (default 60)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("correlate", help="orbit-to-orbit correlation between pre- and post-maneuver orbits")
    scenario_args(sp)
    sp.add_argument("--d", type=float, default=None, help="relaxation ball radius [m] (scenario default 10000)")
    sp.add_argument("--chi-max", type=float, default=None, help="Mahalanobis gate [-] (scenario default 3.38)")
    sp.set_defaults(func=cmd_correlate)

    sp = sub.add_parser("detect", help="maneuver detection: summary JSON and candidate grid CSV")
    scenario_args(sp)
    sp.add_argument("--mode", choices=("auto", "impulsive", "long"), default="auto", help="estimator (default auto)")
    sp.add_argument("--threshold", type=float, default=None, help="WRMS acceptance threshold [-] (default 1.2)")
    sp.add_argument("--mid-step", type=float, default=None, help="burn midpoint grid step [s] (default 60)")
    sp.add_argument("--dur-step", type=float, default=None, help="burn duration grid step [s] (default 60)")
    sp.add_argument("--max-duration", type=float, default=None, help="longest burn considered [s] (default 3600)")
    sp.add_argument("--impulse-step", type=float, default=None, help="impulse epoch grid step [s] (default 60)")
    sp.add_argument("--workers", type=int, default=1, help="worker processes for the candidate grid")
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("divergence", help="finite burn versus midpoint impulse, averaged separation")
    sp.add_argument(
        "--direction", nargs="+", choices=sorted(DIRECTIONS), default=["in-track"], help="thrust direction(s)"
    )
    sp.add_argument("--accel", type=float, default=1e-3, help="thrust acceleration [m/s^2] (default 1e-3)")
    sp.add_argument(
        "--durations", type=_floats, default=[300.0, 600.0, 1200.0, 1800.0, 2400.0], help="burn durations [s], comma separated"
    )
    sp.add_argument("--horizon", type=float, default=86400.0, help="averaging horizon [s] (default 86400)")
    sp.add_argument("--cadence", type=float, default=60.0, help="sampling interval [s] (default 60)")
    sp.add_argument("--altitude", type=float, default=500e3, help="circular orbit altitude [m] (default 500e3)")
    sp.add_argument("--out", default="divergence.csv", help="output CSV path")
    sp.set_defaults(func=cmd_divergence)

    sp = sub.add_parser("observability", help="position-residual RMS over burn start/end guesses")
    sp.add_argument("--direction", choices=sorted(DIRECTIONS), default="normal", help="thrust direction")
    sp.add_argument("--accel", type=float, default=5e-3, help="thrust acceleration [m/s^2] (default 5e-3)")
    sp.add_argument("--tb", type=float, default=43200.0, help="true burn start [s] (default 43200)")
    sp.add_argument("--duration", type=float, default=1200.0, help="true burn duration [s] (default 1200)")
    sp.add_argument("--span-start", type=float, default=86400.0, help="first virtual measurement [s] (default 86400)")
    sp.add_argument("--span-end", type=float, default=172800.0, help="last virtual measurement [s] (default 172800)")
    sp.add_argument("--cadence", type=float, default=60.0, help="virtual measurement interval [s] (default 60)")
    sp.add_argument("--step", type=float, default=120.0, help="grid step on both axes [s] (default 120)")
    sp.add_argument("--half-width", type=float, default=3600.0, help="grid half-width around truth [s] (default 3600)")
    sp.add_argument("--altitude", type=float, default=500e3, help="circular orbit altitude [m] (default 500e3)")
    sp.add_argument("--out", default="observability.csv", help="output CSV path")
    sp.set_defaults(func=cmd_observability)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args, argv)
    except (ScenarioError, FileNotFoundError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
