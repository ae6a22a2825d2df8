from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from longburn.dynamics import ForceModelConfig, InertialState, OrbitalElements, elements_to_state

settings.register_profile("repo", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("repo")

SBSS = OrbitalElements(6888.580, 1e-4, 97.0, 148.0, 19.0, 275.0)
S6A = OrbitalElements(7706.232, 1.841e-3, 66.037, 354.233, 86.872, 296.094)


@pytest.fixture
def two_body() -> ForceModelConfig:
    return ForceModelConfig.two_body()


@pytest.fixture
def j2() -> ForceModelConfig:
    return ForceModelConfig()


@pytest.fixture
def leo_state() -> InertialState:
    return elements_to_state(SBSS, 0.0)


@pytest.fixture
def target_state() -> InertialState:
    return elements_to_state(S6A, 0.0)


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


ACCEPTANCE: list[str] = []


def record(number: int, ok: bool, detail: str) -> None:
    """Log one acceptance line; it is echoed live and again in the terminal summary."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
