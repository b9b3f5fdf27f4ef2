import numpy as np
import pytest

from primetraj.errors import EmptyFeasibleSet, PrimeError
from primetraj.evaluator.model import ModelParams, make_labels
from primetraj.metrics import compute_metrics
from primetraj.pipeline import (
    build_training_set, harness, oracle_scorer, predict, prepare, training_example,
)
from primetraj.scene import Scenario
from primetraj.synth import random_suite, toy_training_set


@pytest.fixture(scope="module")
def suite():
    return random_suite(6, 1)


def test_predict_three_lane_with_model(three_lane):
    res = predict(three_lane, ModelParams.init(8, 0))
    pred = res.prediction
    assert 1 <= len(pred) <= 6
    assert abs(pred.probabilities.sum() - 1.0) < 1e-9
    assert len(res.gamma) == len(res.feasible)
    assert set(res.prepared.timings) >= {"estimate", "generate", "features", "score", "select"}


def test_oracle_scorer_hits_ground_truth(three_lane):
    res = predict(three_lane, oracle_scorer())
    r = compute_metrics(res.prediction, three_lane.ground_truth)
    assert r.miss_rate == 0.0 and r.min_fde < 0.5


def test_oracle_needs_ground_truth(three_lane):
    sc = Scenario(three_lane.lane_graph, three_lane.tracks, three_lane.target_index, three_lane.config)
    with pytest.raises(PrimeError):
        predict(sc, oracle_scorer())
    with pytest.raises(PrimeError):
        training_example(sc)


def test_uturn_raises(uturn):
    with pytest.raises(EmptyFeasibleSet):
        predict(uturn, ModelParams.init(8, 0))


def test_drop_rate_zero_equals_no_drop(three_lane):
    a = prepare(three_lane)
    b = prepare(three_lane, drop_rate=0.0, seed=123)
    np.testing.assert_array_equal(a.features.futures, b.features.futures)
    for x, y in zip(a.features.tracks, b.features.tracks):
        np.testing.assert_array_equal(x, y)


def test_drop_changes_target_mask(three_lane):
    p = prepare(three_lane, drop_rate=0.5, seed=1)
    assert not p.target_track.observed.all() and p.target_track.observed[-1]
    mask = p.features.tracks[0][0, :, 4]
    np.testing.assert_array_equal(mask, p.target_track.observed.astype(float))


def test_training_labels_match_oracle(three_lane):
    ex = training_example(three_lane)
    np.testing.assert_allclose(ex.labels, make_labels(prepare(three_lane).feasible.positions(),
                                                      three_lane.ground_truth))


def test_build_training_set_with_drops(suite):
    exs = build_training_set(suite[:3], max_drop_rate=0.6, seed=2, copies=2)
    assert len(exs) == 6
    again = build_training_set(suite[:3], max_drop_rate=0.6, seed=2, copies=2)
    for a, b in zip(exs, again):
        np.testing.assert_array_equal(a.features.tracks[0], b.features.tracks[0])


def test_harness_counts_failures(suite, uturn, three_lane):
    no_gt = Scenario(three_lane.lane_graph, three_lane.tracks, three_lane.target_index, three_lane.config,
                     scenario_id="nogt")
    blocked = Scenario(uturn.lane_graph, uturn.tracks, uturn.target_index, uturn.config, None,
                       np.zeros((30, 2)), "uturn")
    rep = harness([*suite, blocked, no_gt], oracle_scorer())
    assert rep.aggregate.n_failed == 2
    assert {o.scenario_id for o in rep.failures} == {"uturn", "nogt"}
    assert "EmptyFeasibleSet" in [o for o in rep.failures if o.scenario_id == "uturn"][0].error
    assert rep.aggregate.n_scenarios == len(suite)


def test_harness_aggregate_matches_per_scenario(suite):
    params = ModelParams.init(8, 0)
    rep = harness(suite, params, keep_results=True)
    per = [compute_metrics(o.result.prediction, sc.ground_truth) for o, sc in zip(rep.outcomes, suite)]
    assert rep.aggregate.min_ade == pytest.approx(np.mean([r.min_ade for r in per]), abs=1e-12)
    assert rep.aggregate.infeasibility == 0.0


def test_harness_is_deterministic(suite):
    params = ModelParams.init(8, 0)
    a = harness(suite, params, drop_rate=0.4, seed=9)
    b = harness(suite, params, drop_rate=0.4, seed=9)
    assert a.aggregate == b.aggregate


def test_harness_rejects_empty():
    with pytest.raises(ValueError):
        harness([], oracle_scorer())


def test_toy_set_contains_matching_sample():
    toy = toy_training_set(3, 0)
    for sc in toy:
        p = prepare(sc)
        d = np.min(np.sum((p.feasible.positions() - sc.ground_truth) ** 2, axis=(1, 2)))
        assert d < 1e-18
    rep = harness(toy, oracle_scorer())
    assert rep.aggregate.miss_rate == 0.0
