from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from longburn import scenario
from longburn.correlation import CorrelationReport
from longburn.detection import (
    MODE_IMPULSIVE,
    MODE_LONG,
    MODE_NONE,
    DetectionResult,
    GridSpec,
    ManeuverCandidate,
    NoCorrelationError,
    SearchWindow,
    _is_impulsive_ridge,
    build_search_window,
    detect,
    detect_impulsive,
    is_null_detection,
)
from longburn.dynamics import Trajectory
from longburn.pipeline import correlate


def _setup(name):
    sc = scenario.resolve(name)
    corr = correlate(sc, sc.simulate())
    mid = sc.maneuver.midpoint if sc.maneuver is not None else 0.5 * (corr.t_0 + corr.t_1)
    window = SearchWindow(corr.t_0, corr.t_1, ((mid - 360.0, mid + 360.0),), 1200.0)
    return sc, corr, window, Trajectory(sc.pre_state(), sc.force)


@pytest.fixture(scope="module")
def s6a():
    return _setup("sentinel6a")


@pytest.fixture(scope="module")
def s6a_result(s6a):
    sc, corr, window, pre = s6a
    return detect(pre, corr.measurements, window, sc.force, GridSpec(120.0, 120.0))


# ---------------------------------------------------------------------------
# search window and grid


def test_search_window_validation():
    with pytest.raises(ValueError):
        SearchWindow(10.0, 0.0, ())
    with pytest.raises(ValueError):
        SearchWindow(0.0, 10.0, ((-1.0, 5.0),))
    with pytest.raises(ValueError):
        SearchWindow(0.0, 10.0, ((0.0, 5.0),), max_duration=0.0)
    w = SearchWindow.full(0.0, 100.0)
    assert w.contains(0.0) and w.contains(100.0) and not w.contains(100.5) and w.span == 100.0


def test_build_search_window_pads_merges_and_clips():
    w = build_search_window(0.0, 10_000.0, [100.0, 500.0, 6000.0], max_duration=1000.0)
    assert w.intervals == ((0.0, 1000.0), (5500.0, 6500.0))
    with pytest.raises(NoCorrelationError):
        build_search_window(0.0, 10.0, [], 100.0)


def test_build_search_window_from_report():
    rep = CorrelationReport(
        np.array([0.0, 600.0, 1200.0]), np.array([9.0, 2.0, 9.0]), 3.38, 1e3, np.array([1.0, 1.0, 9.0])
    )
    assert build_search_window(0.0, 1200.0, rep, 600.0, gate="strict").intervals == ((300.0, 900.0),)
    assert build_search_window(0.0, 1200.0, rep, 600.0, gate="relaxed").intervals == ((0.0, 900.0),)


def test_grid_lattice():
    w = SearchWindow(0.0, 1000.0, ((200.0, 400.0),), 240.0)
    g = GridSpec(60.0, 60.0)
    np.testing.assert_array_equal(g.midpoints(w), [240.0, 300.0, 360.0])
    np.testing.assert_array_equal(g.durations(w), [60.0, 120.0, 180.0, 240.0])
    pairs = g.pairs(w)
    assert len(pairs) == 12 and pairs == sorted(pairs)
    assert all(tf - tb <= 240.0 and tb >= 0.0 for tb, tf in pairs)


def test_grid_drops_pairs_outside_window():
    w = SearchWindow(0.0, 1000.0, ((0.0, 100.0),), 600.0)
    assert all(tb >= 0.0 for tb, _ in GridSpec(60.0, 60.0).pairs(w))


# ---------------------------------------------------------------------------
# selection and bookkeeping


def _cand(tb, tf, J, dv, ok=True):
    return ManeuverCandidate(tb, tf, J, dv, ok)


def test_regions_eight_neighbour():
    cands = [_cand(0, 120, 1, 1), _cand(60, 300, 1, 1), _cand(1000, 1120, 1, 1), _cand(5000, 5120, 2, 1, False)]
    res = DetectionResult(cands, cands[0], MODE_LONG, 1.2)
    # midpoints 60 and 180, durations 120 and 240: diagonal neighbours on a 120-s grid
    assert res.accepted_regions(120.0, 120.0) == 2


def test_ridge_rule():
    ridge = [_cand(-30, 30, 1, 5.00), _cand(-60, 60, 1, 5.02), _cand(-90, 90, 1, 5.04), _cand(-120, 120, 3, 6, False)]
    durs = np.array([60.0, 120.0, 180.0, 240.0])
    assert _is_impulsive_ridge(ridge, ridge[0], durs)
    spread = [_cand(-30, 30, 1, 5.0), _cand(-60, 60, 1, 5.3)]
    assert not _is_impulsive_ridge(spread, spread[0], durs)
    cheaper_long = [_cand(-30, 30, 1, 5.1), _cand(-60, 60, 1, 5.0)]
    assert not _is_impulsive_ridge(cheaper_long, cheaper_long[1], durs)


def test_csv_and_summary(tmp_path, s6a_result):
    p = tmp_path / "c.csv"
    s6a_result.to_csv(p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["tb_s", "tf_s", "J", "dV_mps", "accepted"]
    assert len(rows) == len(s6a_result.candidates) + 1
    s = s6a_result.summary()
    assert s["candidates"] == len(s6a_result.candidates) and s["accepted"] == len(s6a_result.accepted)
    assert s["tb"] == s6a_result.selected.t_b


# ---------------------------------------------------------------------------
# detection on scenario data


def test_long_duration_recovers_truth(s6a, s6a_result):
    sc = s6a[0]
    r = s6a_result
    assert r.mode == MODE_LONG
    sel = r.selected
    assert abs(sel.delta_v - 5.168) / 5.168 < 0.02
    assert abs(sel.t_b - sc.maneuver.t_b) <= 120.0 and abs(sel.t_f - sc.maneuver.t_f) <= 120.0


def test_selection_is_min_dv_among_accepted(s6a_result):
    acc = s6a_result.accepted
    assert acc and all(c.J <= s6a_result.threshold for c in acc)
    assert s6a_result.selected.delta_v == min(c.delta_v for c in acc)
    assert all(not c.accepted for c in s6a_result.candidates if not math.isfinite(c.J) or c.J > 1.2)


def test_surface_shape(s6a_result):
    tb, tf, J, dv = s6a_result.surface()
    assert J.shape == (len(tb), len(tf)) and np.count_nonzero(np.isfinite(J)) == len(s6a_result.candidates)


def test_deterministic(s6a, s6a_result):
    sc, corr, window, pre = s6a
    again = detect(pre, corr.measurements, window, sc.force, GridSpec(120.0, 120.0))
    assert [(c.t_b, c.t_f, c.J) for c in again.candidates] == [(c.t_b, c.t_f, c.J) for c in s6a_result.candidates]


def test_zero_threshold_gives_none(s6a):
    sc, corr, window, pre = s6a
    r = detect_impulsive(pre, corr.measurements, window, sc.force, 240.0, threshold=0.0)
    assert r.mode == MODE_NONE and r.selected is None


def test_impulsive_scan(s6a):
    sc, corr, window, pre = s6a
    r = detect_impulsive(pre, corr.measurements, window, sc.force, 120.0)
    assert r.kind == MODE_IMPULSIVE
    assert all(c.duration == pytest.approx(1.0) for c in r.candidates)
    assert r.selected is None or r.selected.dv_eci is not None


def test_detect_rejects_measurements_inside_window(s6a):
    sc, corr, _, pre = s6a
    bad = SearchWindow(corr.t_0, corr.t_1 + 100.0, ((corr.t_0, corr.t_0 + 100.0),))
    with pytest.raises(ValueError):
        detect(pre, corr.measurements, bad, sc.force)


def test_coasting_is_null_detection():
    sc, corr, window, pre = _setup("coasting")
    assert corr.gate == "strict"
    r = detect(pre, corr.measurements, window, sc.force, GridSpec(120.0, 120.0))
    assert r.selected is not None and r.selected.delta_v < 0.05
    assert is_null_detection(r)
