"""Compare the compiled and numpy integration kernels on the same workloads.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import importlib
import time

import numpy as np

from longburn import _kernels_py
from longburn.dynamics import ForceModelConfig, OrbitalElements, elements_to_state

try:
    _kernels_c = importlib.import_module("longburn._kernels")
except ImportError:
    _kernels_c = None

TARGET = OrbitalElements(7706.232, 1.841e-3, 66.037, 354.233, 86.872, 296.094)


def workloads():
    cfg = ForceModelConfig().packed()
    x0 = elements_to_state(TARGET, 0.0).vector
    var0 = np.concatenate((x0, np.eye(6).ravel(), np.zeros(18)))
    times = np.linspace(600.0, 86400.0, 144)
    thrust = np.array([3600.0, 4200.0, 1e-2, 0.0, 0.0])
    no_thrust = np.empty(0)
    yield "state, 1 day, J2", (x0, 0.0, times, cfg, no_thrust, np.empty(0), 0, 1e-12, 1e-9)
    yield "state + burn, 1 day, J2", (x0, 0.0, times, cfg, thrust, np.empty(0), 0, 1e-12, 1e-9)
    yield "state + STM + S, 1 day, J2", (var0, 0.0, times, cfg, thrust, thrust[:2].copy(), 1, 1e-12, 1e-9)


def best_of(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out, _ = fn(*args)
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"{'workload':32s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, wl in workloads():
        t_py, y_py = best_of(_kernels_py.integrate, wl, args.repeat)
        if _kernels_c is None:
            print(f"{name:32s} {t_py:11.4f} {'n/a':>11s}")
            continue
        t_c, y_c = best_of(_kernels_c.integrate, wl, args.repeat)
        diff = float(np.max(np.abs(np.asarray(y_py) - np.asarray(y_c))))
        print(f"{name:32s} {t_py:11.4f} {t_c:11.4f} {t_py / t_c:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
