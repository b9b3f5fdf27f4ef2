import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from primetraj.config import Config
from primetraj.errors import DegenerateInput
from primetraj.metrics import (
    AUDIT_KAPPA, MetricsReport, aggregate, audit_curvature, compute_metrics, knot_curvatures,
)
from primetraj.scene import PredictionSet

from conftest import arc_points
from metric_fixtures import FIXTURES, GT


@pytest.mark.parametrize("fixture", FIXTURES, ids=[f[0] for f in FIXTURES])
def test_hand_evaluated_fixtures(fixture):
    _, preds, probs, ade, fde, mr, pade, pfde = fixture
    r = compute_metrics(PredictionSet(np.stack(preds), np.array(probs)), GT)
    assert abs(r.min_ade - ade) < 1e-9
    assert abs(r.min_fde - fde) < 1e-9
    assert r.miss_rate == mr
    assert abs(r.p_min_ade - pade) < 1e-9
    assert abs(r.p_min_fde - pfde) < 1e-9
    assert r.infeasibility == 0.0 and r.n_predictions == len(preds)


def test_ground_truth_shape_mismatch():
    pred = PredictionSet(np.zeros((1, 30, 2)), np.array([1.0]))
    with pytest.raises(ValueError):
        compute_metrics(pred, np.zeros((20, 2)))


# ------------------------------------------------------------ audit

def test_circle_radius_2_is_infeasible():
    pts = arc_points(2.0, 0.0, 1.5 * math.pi, 0.3)
    r = audit_curvature(pts)
    assert not r.feasible
    # the natural end condition distorts the first knots; the interior is the circle
    np.testing.assert_allclose(knot_curvatures(pts)[3:-3], 0.5, rtol=0.1)


def test_circle_radius_10_is_feasible():
    pts = arc_points(10.0, 0.0, math.pi, 0.5)
    r = audit_curvature(pts)
    assert r.feasible
    interior = knot_curvatures(pts)[2:-2]
    np.testing.assert_allclose(interior, 0.1, rtol=0.1)


def test_straight_line_has_zero_curvature():
    assert audit_curvature(GT).max_curvature == pytest.approx(0.0, abs=1e-12)


def test_agent_at_rest():
    still = np.zeros((30, 2))
    r = audit_curvature(still)
    assert r.feasible and r.n_knots_checked == 0
    with pytest.raises(DegenerateInput):
        audit_curvature(still, strict=True)
    with pytest.raises(DegenerateInput):
        knot_curvatures(np.zeros((2, 2)))


def test_infeasible_prediction_is_counted():
    bad = arc_points(2.0, 0.0, 1.5 * math.pi, 0.3)[:30] - [2.0, 0.0] + GT[0]
    pred = PredictionSet(np.stack([GT, bad]), np.array([0.5, 0.5]))
    r = compute_metrics(pred, GT)
    assert (r.n_infeasible, r.infeasibility) == (1, 0.5)


def test_curvature_is_rigid_motion_invariant():
    rng = np.random.default_rng(4)
    pts = np.cumsum(rng.normal(size=(30, 2)), axis=0)
    c, s = math.cos(0.7), math.sin(0.7)
    moved = pts @ np.array([[c, -s], [s, c]]).T + [100.0, -40.0]
    np.testing.assert_allclose(knot_curvatures(moved), knot_curvatures(pts), rtol=1e-7, atol=1e-12)


def test_threshold_default():
    assert AUDIT_KAPPA == pytest.approx(1 / 3)


# ------------------------------------------------------------ aggregation

def _random_report(rng):
    k = int(rng.integers(1, 7))
    pos = GT + rng.normal(0, 2.0, size=(k, 1, 2)) + np.cumsum(rng.normal(0, 0.05, (k, 30, 2)), axis=1)
    p = rng.random(k) + 0.05
    return compute_metrics(PredictionSet(pos, p / p.sum()), GT)


def test_aggregate_matches_recomputation():
    rng = np.random.default_rng(0)
    reports = [_random_report(rng) for _ in range(50)]
    agg = aggregate(reports, n_failed=3)
    for key in ("min_ade", "min_fde", "miss_rate", "p_min_ade", "p_min_fde"):
        total = 0.0
        for r in reports:
            total += getattr(r, key)
        assert getattr(agg, key) == pytest.approx(total / 50, abs=1e-12)
    assert agg.n_predictions == sum(r.n_predictions for r in reports)
    assert agg.infeasibility == pytest.approx(sum(r.n_infeasible for r in reports) / agg.n_predictions)
    assert (agg.n_scenarios, agg.n_failed) == (50, 3)


def test_empty_aggregate():
    agg = aggregate([], n_failed=2)
    assert math.isnan(agg.min_ade) and agg.n_failed == 2 and agg.n_scenarios == 0


def test_report_dict_round_trip():
    r = compute_metrics(PredictionSet(GT[None], np.array([1.0])), GT)
    assert MetricsReport(**r.to_dict()) == r


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 5.0), st.floats(0.1, 5.0))
def test_miss_rate_monotone_in_threshold(seed, a, b):
    rng = np.random.default_rng(seed)
    lo, hi = sorted((a, b))
    preds = [PredictionSet(GT + rng.normal(0, 2.0, (1, 30, 2)), np.array([1.0])) for _ in range(10)]
    mr = [aggregate([compute_metrics(p, GT, Config(miss_threshold=t)) for p in preds]).miss_rate
          for t in (lo, hi)]
    assert mr[0] >= mr[1]
