"""Greedy non-maximum suppression over scored trajectories."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .scene import PredictionSet, Trajectory

DISTANCES = ("endpoint", "accumulated")


def trajectory_distance(a: np.ndarray, b: np.ndarray, kind: str = "endpoint") -> float:
    """Endpoint Euclidean distance, or the accumulated squared error Dist."""
    if kind == "endpoint":
        return float(np.hypot(*(a[-1] - b[-1])))
    if kind == "accumulated":
        return float(np.sum((a - b) ** 2))
    raise ValueError(f"unknown NMS distance {kind!r}; expected one of {DISTANCES}")


def nms_order(positions: np.ndarray, gamma, k: int, threshold: float,
              distance: str = "endpoint") -> list[int]:
    """Indices picked greedily by descending score (ties: lower index first).

    A candidate is kept iff its distance to every kept one is >= threshold.
    Candidates with zero score are never picked, since they would carry zero
    probability.
    """
    gamma = np.asarray(gamma, dtype=float)
    if len(gamma) != len(positions) or len(gamma) == 0:
        raise ValueError("need one score per trajectory and at least one trajectory")
    if k < 1:
        raise ValueError("k must be >= 1")
    kept: list[int] = []
    for i in np.argsort(-gamma, kind="stable"):
        if gamma[i] <= 0:
            break
        if all(trajectory_distance(positions[i], positions[j], distance) >= threshold for j in kept):
            kept.append(int(i))
            if len(kept) == k:
                break
    return kept


def nms_select(trajectories: Sequence[Trajectory] | np.ndarray, gamma, k: int, threshold: float,
               distance: str = "endpoint") -> PredictionSet:
    """Select up to k trajectories; probabilities are the renormalized scores."""
    is_array = isinstance(trajectories, np.ndarray)
    positions = trajectories if is_array else np.stack([t.positions for t in trajectories])
    gamma = np.asarray(gamma, dtype=float)
    idx = nms_order(positions, gamma, k, threshold, distance)
    if not idx:
        raise ValueError("no trajectory has a positive score")
    p = gamma[idx] / gamma[idx].sum()
    if is_array:
        return PredictionSet(positions[idx], p)
    return PredictionSet.from_trajectories([trajectories[i] for i in idx], p)
