import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from primetraj.frenet import FrenetFrame, FrenetState
from primetraj.generator import generate, sample_path
from primetraj.scene import LaneGraph
from primetraj.selection import nms_order, nms_select, trajectory_distance

from conftest import straight_path


def line(offset, n=30):
    return np.column_stack([np.arange(n, dtype=float), np.full(n, float(offset))])


def greedy_oracle(positions, gamma, k, threshold):
    """Straight-line greedy: repeatedly take the best remaining candidate that
    is far enough from everything taken so far."""
    taken = []
    remaining = list(range(len(gamma)))
    while remaining and len(taken) < k:
        best = max(remaining, key=lambda i: (gamma[i], -i))
        remaining.remove(best)
        if gamma[best] <= 0:
            break
        ok = True
        for j in taken:
            d = np.sqrt(np.sum((positions[best][-1] - positions[j][-1]) ** 2))
            if d < threshold:
                ok = False
        if ok:
            taken.append(best)
    return taken


def test_duplicate_is_suppressed():
    pos = np.stack([line(0), line(0)])
    assert nms_order(pos, [0.6, 0.4], 2, 2.0) == [0]
    pos = np.stack([line(0), line(0), line(5)])
    assert nms_order(pos, [0.5, 0.3, 0.2], 2, 2.0) == [0, 2]


def test_probabilities_renormalized():
    pos = np.stack([line(0), line(0.5), line(5)])
    pred = nms_select(pos, [0.5, 0.3, 0.2], 2, 2.0)
    np.testing.assert_allclose(pred.probabilities, [0.5 / 0.7, 0.2 / 0.7])


def test_fewer_than_k_when_everything_is_close():
    pos = np.stack([line(0.1 * i) for i in range(10)])
    assert len(nms_order(pos, np.full(10, 0.1), 6, 2.0)) == 1


def test_zero_scores_are_never_selected():
    pos = np.stack([line(0), line(10)])
    assert nms_order(pos, [1.0, 0.0], 6, 2.0) == [0]
    with pytest.raises(ValueError):
        nms_select(pos, [0.0, 0.0], 2, 2.0)


def test_input_errors():
    with pytest.raises(ValueError):
        nms_order(np.stack([line(0)]), [0.5, 0.5], 2, 2.0)
    with pytest.raises(ValueError):
        nms_order(np.stack([line(0)]), [1.0], 0, 2.0)
    with pytest.raises(ValueError):
        trajectory_distance(line(0), line(1), "frechet")


def test_accumulated_distance():
    assert trajectory_distance(line(0), line(1), "accumulated") == pytest.approx(30.0)
    assert trajectory_distance(line(0), line(1)) == pytest.approx(1.0)


def test_matches_greedy_oracle_on_full_grid(cfg):
    frame = FrenetFrame(straight_path(400.0))
    start = FrenetState(20.0, 10.0, 0, 0, 0, 0)
    grid = sample_path(frame, start, cfg)
    pos = np.stack([grid["x"], grid["y"]], -1).reshape(315, 30, 2)
    rng = np.random.default_rng(0)
    for _ in range(5):
        g = rng.random(315)
        g /= g.sum()
        for k, thr in ((6, 2.0), (6, 5.0), (10, 1.0)):
            assert nms_order(pos, g, k, thr) == greedy_oracle(pos, g, k, thr)
    # selection from trajectory objects carries the full state
    fs = generate([frame], [start], LaneGraph({}), cfg)
    pred = nms_select(fs.trajectories, np.full(len(fs), 1 / len(fs)), 6, 2.0)
    assert pred.full_state is not None and len(pred) == 6


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8), st.floats(0.1, 6.0))
def test_selection_properties(seed, k, thr):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    pos = rng.normal(0, 4.0, (n, 5, 2))
    g = rng.random(n) + 1e-3
    g /= g.sum()
    idx = nms_order(pos, g, k, thr)
    assert idx == greedy_oracle(pos, g, k, thr)
    assert 1 <= len(idx) <= k
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            assert trajectory_distance(pos[idx[a]], pos[idx[b]]) >= thr
    # only the ranking matters
    assert nms_order(pos, 3.7 * g, k, thr) == idx
    scores = g[idx]
    assert np.all(np.diff(scores) <= 0)
