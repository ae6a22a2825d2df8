from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from longburn.constants import MU_EARTH, R_EARTH
from longburn.experiments import (
    burn_vs_impulse,
    circular_state,
    direction_vector,
    divergence_study,
    observability_map,
    write_divergence_csv,
)


def test_direction_vectors():
    np.testing.assert_array_equal(direction_vector("normal"), [0, 1, 0])
    np.testing.assert_allclose(direction_vector([3, 0, 4]), [0.6, 0, 0.8])
    with pytest.raises(ValueError):
        direction_vector("up")


def test_circular_state():
    s = circular_state(500e3)
    assert np.linalg.norm(s.r) == R_EARTH + 500e3
    assert np.linalg.norm(s.v) == pytest.approx(math.sqrt(MU_EARTH / (R_EARTH + 500e3)), rel=1e-15)


def test_divergence_vanishes_for_short_burns():
    u = np.array([1e-3, 0, 0])
    short = burn_vs_impulse(u, 1.0, horizon=6000.0)
    longer = burn_vs_impulse(u, 600.0, horizon=6000.0)
    assert short.max() < 1e-3
    assert longer.mean() > 100 * short.mean()
    # before the burn starts both trajectories coincide
    assert short[0] == 0.0 and longer[0] == 0.0


def test_divergence_grows_with_duration(tmp_path):
    tab = divergence_study("radial", 1e-3, (300.0, 600.0, 1200.0), horizon=12000.0)
    assert np.all(np.diff(tab.mean_difference) > 0)
    assert np.all(tab.max_difference >= tab.mean_difference)
    p = tmp_path / "d.csv"
    write_divergence_csv(p, [tab])
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["direction", "accel_mps2", "duration_s", "mean_diff_m", "max_diff_m"]
    assert len(rows) == 4 and rows[1][0] == "radial"


def test_divergence_scales_with_accel():
    # the separation is linear in the acceleration for small burns
    a = divergence_study("normal", 1e-4, (600.0,), horizon=6000.0).mean_difference[0]
    b = divergence_study("normal", 2e-4, (600.0,), horizon=6000.0).mean_difference[0]
    assert b / a == pytest.approx(2.0, rel=1e-3)


@pytest.fixture(scope="module")
def small_map():
    return observability_map("radial", 5e-3, t_b=4000.0, duration=1200.0, span=(20000.0, 30000.0), step=600.0, half_width=1200.0)


def test_observability_truth_is_global_minimum(small_map):
    g = small_map
    assert g.rms.shape == (5, 5)
    assert g.truth_index() == (2, 2) == g.global_minimum()
    assert g.rms[2, 2] < 1e-3
    assert any((i, j) == (2, 2) for i, j, _ in g.local_minima())


def test_observability_invalid_cells_and_csv(tmp_path, small_map):
    g = small_map
    assert np.all(np.isnan(g.rms[~g.valid]))
    p = tmp_path / "o.csv"
    g.to_csv(p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["t_b_offset_s", "t_f_offset_s", "rms_m"]
    assert len(rows) - 1 == int(g.valid.sum())
    assert ["0.0", "0.0"] == rows[1 + [r[:2] for r in rows[1:]].index(["0.0", "0.0"])][:2]
