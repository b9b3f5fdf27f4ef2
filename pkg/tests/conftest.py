import math

import numpy as np
import pytest

from primetraj.config import Config
from primetraj.path_search import ReferencePath, build_reference_path
from primetraj.scene import LaneGraph, LaneSegment
from primetraj.synth import load_bundled


def polyline_path(points) -> ReferencePath:
    pts = np.asarray(points, dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    return ReferencePath(("P",), pts, cum)


def straight_path(length: float = 200.0, spacing: float = 2.0, start=(0.0, 0.0), heading: float = 0.0):
    s = np.arange(0.0, length + 1e-9, spacing)
    d = np.array([math.cos(heading), math.sin(heading)])
    return polyline_path(np.asarray(start) + s[:, None] * d)


def arc_points(radius: float, a0: float, a1: float, spacing: float, center=(0.0, 0.0)):
    n = max(2, int(math.ceil(abs(a1 - a0) * radius / spacing)) + 1)
    a = np.linspace(a0, a1, n)
    return np.stack([center[0] + radius * np.cos(a), center[1] + radius * np.sin(a)], axis=-1)


def circle_path(radius: float = 50.0, spacing: float = 2.0, sweep: float = math.pi):
    """Counter-clockwise arc starting at (radius, 0), resampled like a lane."""
    graph = LaneGraph({"C": LaneSegment("C", arc_points(radius, 0.0, sweep, 0.5))})
    return build_reference_path(graph, ["C"], spacing)


@pytest.fixture(scope="session")
def cfg():
    return Config()


@pytest.fixture(scope="session")
def three_lane():
    return load_bundled("three_lane")


@pytest.fixture(scope="session")
def uturn():
    return load_bundled("uturn")


def small_scene(seed: int = 0, path_lengths=(7, 9), n_agents: int = 3, futures_per_path=(5, 7)):
    """Random order-one evaluator inputs: 2 paths, 3 agents, 12 futures by default."""
    from primetraj.evaluator.features import SceneFeatures

    rng = np.random.default_rng(seed)
    paths = tuple(rng.normal(0, 0.5, (m, 3)) for m in path_lengths)
    tracks = []
    for _ in path_lengths:
        t = rng.normal(0, 0.5, (n_agents, 20, 5))
        t[..., 4] = rng.random((n_agents, 20)) < 0.8
        tracks.append(t)
    fpath = np.repeat(np.arange(len(path_lengths)), futures_per_path)
    futures = rng.normal(0, 0.5, (len(fpath), 30, 4))
    return SceneFeatures(paths, tuple(tracks), futures, fpath)


def gradient_relative_errors(params, feats, psi, step=1e-4, floor=1e-6):
    """Per-parameter relative error of the analytic gradient against a
    five-point central difference; the floor makes vanishing gradients
    compare absolutely."""
    from primetraj.evaluator.model import flatten_grads, loss_and_grad, scene_loss

    _, grads = loss_and_grad(params, feats, psi)
    analytic = flatten_grads(grads, params.width)
    base = params.flat()

    def loss_at(i, h):
        x = base.copy()
        x[i] += h
        return scene_loss(params.with_flat(x), feats, psi)

    numeric = np.array([(8 * (loss_at(i, step) - loss_at(i, -step)) - (loss_at(i, 2 * step) - loss_at(i, -2 * step)))
                        / (12 * step) for i in range(len(base))])
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
