"""Dual (Cartesian + Frenet) feature sequences for the evaluator.

Everything is expressed relative to the target's last observed position
(x, y) and, per reference path, to the target's projected arc length (s).
That makes the features, and hence the scores, invariant to a rigid
translation of the whole scene.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..frenet import FrenetFrame
from ..generator import FeasibleSet
from ..scene import Track, Trajectory

# meters -> order-one inputs; the mask bit is left as is
TRACK_SCALE = np.array([0.05, 0.05, 0.05, 0.5, 1.0])
FUTURE_SCALE = np.array([0.05, 0.05, 0.05, 0.5])
PATH_SCALE = np.full(3, 0.05)


@dataclass(frozen=True)
class SceneFeatures:
    paths: tuple[np.ndarray, ...]  # per path (M_i, 3): x, y, s
    tracks: tuple[np.ndarray, ...]  # per path (m+1, N_obs, 5), target first
    futures: np.ndarray  # (n, N_f, 4) in generator order
    future_path: np.ndarray  # (n,) path index of each future

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    @property
    def n_futures(self) -> int:
        return len(self.future_path)


def track_features(track: Track, frame: FrenetFrame, origin, s_origin: float) -> np.ndarray:
    """Per-step (x, y, s, d, b) of a track on one frame, unscaled."""
    s, d = frame.project_points(track.positions)
    rel = track.positions - origin
    return np.column_stack([rel, s - s_origin, d, track.observed.astype(float)])


def trajectory_features(traj: Trajectory, origin, s_origin: float) -> np.ndarray:
    """Per-step (x, y, s, d) of a generated trajectory, unscaled."""
    return np.column_stack([traj.x - origin[0], traj.y - origin[1], traj.s - s_origin, traj.d])


def path_features(frame: FrenetFrame, origin, s_origin: float) -> np.ndarray:
    return np.column_stack([frame.points - origin, frame.knots - s_origin])


def dual_representation(item: Track | Trajectory, frame: FrenetFrame, origin,
                        s_origin: float | None = None) -> np.ndarray:
    """Unscaled dual-coordinate sequence of a track or trajectory.

    ``s_origin`` defaults to the arc length of ``origin`` projected on the frame.
    """
    origin = np.asarray(origin, dtype=float)
    if s_origin is None:
        s_origin = float(frame.project_points(origin[None])[0][0])
    if isinstance(item, Track):
        return track_features(item, frame, origin, s_origin)
    return trajectory_features(item, origin, s_origin)


def build_scene_features(target: Track, neighbors: Sequence[Track], fs: FeasibleSet) -> SceneFeatures:
    """Scaled feature tensors for one scene; ``target`` should already be padded."""
    origin = np.asarray(target.positions[-1], dtype=float)
    all_tracks = [target, *neighbors]
    paths, tracks, s0 = [], [], []
    for frame in fs.frames:
        s_origin = float(frame.project_points(origin[None])[0][0])
        s0.append(s_origin)
        paths.append(path_features(frame, origin, s_origin) * PATH_SCALE)
        tracks.append(np.stack([track_features(t, frame, origin, s_origin) for t in all_tracks])
                      * TRACK_SCALE)
    futures = np.stack([trajectory_features(t, origin, s0[t.path_index]) for t in fs.trajectories])
    fpath = np.array([t.path_index for t in fs.trajectories], dtype=int)
    if np.any(np.diff(fpath) < 0):
        raise ValueError("trajectories must be grouped by path in generator order")
    return SceneFeatures(tuple(paths), tuple(tracks), futures * FUTURE_SCALE, fpath)
