from __future__ import annotations

import csv
import json
import subprocess
import sys

from longburn import BACKEND, __version__
from longburn.cli import EXIT_DETECTION_FAILED, EXIT_INPUT, EXIT_NO_CORRELATION, EXIT_OK, main


def _run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def test_help_and_version(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "detect" in capsys.readouterr().out
    assert main(["--version"]) == EXIT_OK
    assert __version__ in capsys.readouterr().out


def test_bad_arguments():
    assert main(["detect"]) == EXIT_INPUT
    assert main(["frobnicate"]) == EXIT_INPUT


def test_unknown_scenario(tmp_path):
    assert _run(tmp_path, "simulate", "no-such-scenario") == EXIT_INPUT


def test_simulate_outputs(tmp_path):
    assert _run(tmp_path, "simulate", "sentinel3a", "--truth-step", "600") == EXIT_OK
    rows = list(csv.reader(open(tmp_path / "tracklets.csv")))
    assert rows[0][0] == "epoch_s" and len({r[4] for r in rows[1:]}) == 15
    assert (tmp_path / "truth.csv").exists()
    run = json.loads((tmp_path / "run.json").read_text())
    assert run["exit_code"] == 0 and run["command"][:2] == ["longburn", "simulate"]
    assert run["versions"]["kernel_backend"] == BACKEND and len(run["scenario_sha256"]) == 64


def test_simulate_is_seeded(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    _run(a, "simulate", "sentinel6a")
    _run(b, "simulate", "sentinel6a")
    _run(c, "simulate", "sentinel6a", "--seed", "7")
    assert (a / "tracklets.csv").read_bytes() == (b / "tracklets.csv").read_bytes()
    assert (a / "tracklets.csv").read_bytes() != (c / "tracklets.csv").read_bytes()


def test_correlate_and_gate(tmp_path):
    assert _run(tmp_path, "correlate", "coasting") == EXIT_OK
    verdict = json.loads((tmp_path / "verdict.json").read_text())
    assert verdict["gate"] == "strict"
    assert _run(tmp_path / "x", "correlate", "coasting", "--chi-max", "1e-9", "--d", "0") == EXIT_NO_CORRELATION


def test_detect_none_exit(tmp_path):
    code = _run(tmp_path, "detect", "coasting", "--mode", "impulsive", "--threshold", "0", "--impulse-step", "3600")
    assert code == EXIT_DETECTION_FAILED
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["mode"] == "none"
    assert json.loads((tmp_path / "run.json").read_text())["exit_code"] == EXIT_DETECTION_FAILED


def test_tracklets_from_file(tmp_path):
    _run(tmp_path, "simulate", "coasting")
    code = _run(tmp_path / "r", "correlate", "coasting", "--tracklets", str(tmp_path / "tracklets.csv"))
    assert code == EXIT_OK
    assert _run(tmp_path / "m", "correlate", "coasting", "--tracklets", str(tmp_path / "missing.csv")) == EXIT_INPUT


def test_divergence_command(tmp_path):
    out = tmp_path / "d.csv"
    code = main(["divergence", "--direction", "normal", "--durations", "300,600", "--horizon", "3000", "--out", str(out)])
    assert code == EXIT_OK
    assert len(out.read_text().splitlines()) == 3


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "longburn", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "simulate" in out.stdout
