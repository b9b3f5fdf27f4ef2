"""Sampling-based trajectory generator in the Frenet frame.

Per reference path the longitudinal motion is a quartic in time (end speed
sampled, end position free) and the lateral motion a quintic (end offset
sampled, at rest laterally at the horizon). Every lon x lat combination is
converted to Cartesian space and filtered by speed, tangential acceleration,
curvature and static-obstacle constraints.

The kinematic checks run on a time grid finer than the emitted steps, and the
emitted position sequence must also keep the knot curvature of its natural
cubic spline interpolant within the curvature limit. Together these make
every emitted trajectory pass the curvature audit in ``metrics``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .config import Config
from .errors import EmptyFeasibleSet, PrimeError
from .frenet import FrenetFrame, FrenetState
from .metrics import REST_STEP
from .path_search import ReferencePath, closest_point_on_polyline
from .scene import AgentState, LaneGraph, Trajectory

log = logging.getLogger(__name__)

# tolerance for calling a longitudinal speed "negative"
_REVERSE_TOL = 1e-9
# constraint checks run on a grid this many times finer than the output steps
CHECK_SUBSTEPS = 4


@dataclass(frozen=True)
class PolynomialCurve:
    """c0 + c1 t + ... + c_n t^n on [0, horizon]."""

    coefficients: np.ndarray
    horizon: float

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, t, order: int = 0):
        c = np.polynomial.polynomial.polyder(self.coefficients, order) if order else self.coefficients
        return np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), c)


def quartic_coefficients(s0, v0, v_end, horizon):
    """Coefficient columns (..., 5) of s(t) with s(0)=s0, s'(0)=v0, s''(0)=0,
    s'(T)=v_end, s''(T)=0. Broadcasts over array inputs."""
    s0, v0, v_end = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (s0, v0, v_end)))
    T = float(horizon)
    c3 = (v_end - v0) / T**2
    c4 = (v0 - v_end) / (2.0 * T**3)
    zero = np.zeros_like(s0)
    return np.stack([s0, v0, zero, c3, c4], axis=-1)


def quintic_coefficients(d0, v0, d_end, horizon):
    """Coefficient columns (..., 6) of d(t) with d(0)=d0, d'(0)=v0, d''(0)=0,
    d(T)=d_end, d'(T)=0, d''(T)=0."""
    d0, v0, d_end = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (d0, v0, d_end)))
    T = float(horizon)
    h = d_end - d0 - v0 * T
    g = -v0 * T
    zero = np.zeros_like(d0)
    return np.stack(
        [d0, v0, zero, (10 * h - 4 * g) / T**3, (7 * g - 15 * h) / T**4, (6 * h - 3 * g) / T**5],
        axis=-1,
    )


def fit_quartic_lon(s0: float, s_dot0: float, s_dot_end: float, horizon: float) -> PolynomialCurve:
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    return PolynomialCurve(quartic_coefficients(s0, s_dot0, s_dot_end, horizon), float(horizon))


def fit_quintic_lat(d0: float, d_dot0: float, d_end: float, horizon: float) -> PolynomialCurve:
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    return PolynomialCurve(quintic_coefficients(d0, d_dot0, d_end, horizon), float(horizon))


def _eval_rows(coefs: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Value, first and second derivative of each coefficient row at times t."""
    powers = np.arange(coefs.shape[-1])
    tp = t[None, :] ** powers[:, None]  # (deg+1, N)
    val = coefs @ tp
    d1c = coefs[:, 1:] * powers[1:]
    d1 = d1c @ tp[:-1]
    d2c = d1c[:, 1:] * powers[1:-1]
    d2 = d2c @ tp[:-2]
    return val, d1, d2


def lon_sample_targets(s_dot0: float, cfg: Config, speed_limit: float | None = None) -> np.ndarray:
    """End-speed samples, uniform over the reachable window, endpoints included."""
    cap = cfg.max_sample_speed if speed_limit is None else min(cfg.max_sample_speed, speed_limit)
    T = cfg.prediction_horizon
    lo = max(0.0, s_dot0 - cfg.decel_limit * T)
    hi = min(cap, s_dot0 + cfg.accel_limit * T)
    if hi < lo:
        return np.empty(0)
    if hi - lo < 1e-12:
        return np.array([lo])
    return np.linspace(lo, hi, cfg.n_lon_samples)


def lat_sample_targets(cfg: Config) -> np.ndarray:
    half = cfg.lane_width / 2.0
    if cfg.n_lat_samples == 1:
        return np.zeros(1)
    return np.linspace(-half, half, cfg.n_lat_samples)


def future_times(cfg: Config) -> np.ndarray:
    n = cfg.n_future_steps
    return cfg.traj_time_step * np.arange(1, n + 1)


# ---------------------------------------------------------------- feasibility

@dataclass(frozen=True)
class Violation:
    step: int
    constraint: str  # "speed" | "acceleration" | "curvature" | "collision"
    value: float

    def __str__(self) -> str:
        return f"{self.constraint} violated at step {self.step} (value {self.value:.4g})"


CONSTRAINTS = ("speed", "acceleration", "curvature", "collision")


def points_in_polygon(xy: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Boolean mask of points inside (or on the boundary of) a convex polygon."""
    e = np.roll(poly, -1, axis=0) - poly
    orient = 1.0 if (e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)).sum() > 0 else -1.0
    rel = xy[..., None, :] - poly
    cross = e[:, 0] * rel[..., 1] - e[:, 1] * rel[..., 0]
    return np.all(orient * cross >= 0.0, axis=-1)


def violation_masks(v, a, kappa, x, y, obstacles: Sequence[np.ndarray], cfg: Config) -> dict[str, np.ndarray]:
    """Per-step boolean violation masks for each constraint (same shape as v)."""
    v, a, kappa = np.asarray(v), np.asarray(a), np.asarray(kappa)
    hit = np.zeros(v.shape, dtype=bool)
    if obstacles:
        xy = np.stack([np.asarray(x), np.asarray(y)], axis=-1)
        for poly in obstacles:
            hit |= points_in_polygon(xy, poly)
    return {
        "speed": (v < 0.0) | (v > cfg.v_max) | ~np.isfinite(v),
        "acceleration": (np.abs(a) > cfg.a_max) | ~np.isfinite(a),
        "curvature": (np.abs(kappa) > cfg.kappa_max) | ~np.isfinite(kappa),
        "collision": hit,
    }


def check_feasibility(traj: Trajectory, graph: LaneGraph, cfg: Config) -> Violation | None:
    """None if every step satisfies all constraints, else the first violation."""
    masks = violation_masks(traj.v, traj.a, traj.kappa, traj.x, traj.y, graph.obstacles, cfg)
    values = {"speed": traj.v, "acceleration": traj.a, "curvature": traj.kappa,
              "collision": np.zeros(len(traj))}
    for k in range(len(traj)):
        for name in CONSTRAINTS:
            if masks[name][k]:
                return Violation(k, name, float(values[name][k]))
    return None


# ------------------------------------------------------------------ generation

@dataclass
class FeasibleSet:
    paths: list[ReferencePath]  # reachable paths only
    frames: list[FrenetFrame]
    trajectories: list[Trajectory]  # ordered by (path, lon_index, lat_index)
    candidates_per_path: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def counts(self) -> list[int]:
        n = [0] * len(self.paths)
        for t in self.trajectories:
            n[t.path_index] += 1
        return n

    def positions(self) -> np.ndarray:
        return np.stack([t.positions for t in self.trajectories])


def sample_path(frame: FrenetFrame, start: FrenetState, cfg: Config,
                speed_limit: float | None = None, substeps: int = 1) -> dict[str, np.ndarray]:
    """All lon x lat candidates on one frame as (L, J, N * substeps) arrays.

    With substeps > 1 the time grid is refined so constraints can be checked
    between output steps; output step k sits at column (k + 1) * substeps - 1.
    """
    T = cfg.prediction_horizon
    t = (cfg.traj_time_step / substeps) * np.arange(1, cfg.n_future_steps * substeps + 1)
    lon_targets = lon_sample_targets(start.s_dot, cfg, speed_limit)
    lat_targets = lat_sample_targets(cfg)
    S, Sd, Sdd = _eval_rows(quartic_coefficients(start.s, start.s_dot, lon_targets, T), t)
    D, Dd, Ddd = _eval_rows(quintic_coefficients(start.d, start.d_dot, lat_targets, T), t)
    L, J = len(lon_targets), len(lat_targets)
    shape = (L, J, len(t))
    out = frame.to_cartesian_arrays(
        np.broadcast_to(S[:, None, :], shape), np.broadcast_to(Sd[:, None, :], shape),
        np.broadcast_to(Sdd[:, None, :], shape), np.broadcast_to(D[None, :, :], shape),
        np.broadcast_to(Dd[None, :, :], shape), np.broadcast_to(Ddd[None, :, :], shape),
    )
    signed_v = np.where(out["s_dot"] < -_REVERSE_TOL, -out["speed"], out["speed"])
    # a non-positive scale means the offset crossed the reference's centre of curvature
    singular = out["scale"] <= 0
    kappa = np.where(singular, np.inf, out["kappa"])
    return {
        "t": t, "x": out["x"], "y": out["y"], "v": signed_v, "a": out["accel"],
        "kappa": kappa, "theta": out["theta"],
        "s": np.broadcast_to(S[:, None, :], shape), "d": np.broadcast_to(D[None, :, :], shape),
        "lon_targets": lon_targets, "lat_targets": lat_targets,
    }


@lru_cache(maxsize=8)
def _natural_spline_operator(n: int) -> np.ndarray:
    """Matrix mapping knot values (n,) to natural-spline second derivatives
    at unit knot spacing."""
    A = 4.0 * np.eye(n - 2) + np.eye(n - 2, k=1) + np.eye(n - 2, k=-1)
    D2 = np.zeros((n - 2, n))
    for i in range(n - 2):
        D2[i, i:i + 3] = (6.0, -12.0, 6.0)
    op = np.zeros((n, n))
    op[1:-1] = np.linalg.solve(A, D2)
    op.setflags(write=False)
    return op


def index_spline_curvature(xy: np.ndarray, rest_step: float = REST_STEP) -> np.ndarray:
    """Knot curvature of natural cubic splines x(k), y(k) over the step index.

    ``xy`` is (..., n, 2); knots moving less than ``rest_step`` per step are NaN.
    """
    y = np.moveaxis(np.asarray(xy, dtype=float), -1, 0)  # (2, ..., n)
    n = y.shape[-1]
    if n < 3:
        raise ValueError("need at least 3 points")
    m = y @ _natural_spline_operator(n).T
    d1 = np.empty_like(y)
    d1[..., :-1] = np.diff(y, axis=-1) - (2.0 * m[..., :-1] + m[..., 1:]) / 6.0
    d1[..., -1] = y[..., -1] - y[..., -2] + (m[..., -2] + 2.0 * m[..., -1]) / 6.0
    speed = np.hypot(d1[0], d1[1])
    cross = np.abs(d1[0] * m[1] - d1[1] * m[0])
    safe = np.where(speed >= rest_step, speed, 1.0)
    return np.where(speed >= rest_step, cross / safe**3, np.nan)


def generate(frames: Sequence[FrenetFrame], starts: Sequence[FrenetState], graph: LaneGraph,
             cfg: Config, speed_limits: Sequence[float | None] | None = None,
             substeps: int = CHECK_SUBSTEPS, discrete_check: bool = True) -> FeasibleSet:
    """Feasible trajectory set over all frames; unreachable paths are dropped.

    Kinematic limits are checked on a time grid ``substeps`` times finer than
    the output. With ``discrete_check`` the emitted position sequence must
    also keep its spline-interpolated knot curvature within kappa_max.
    """
    if speed_limits is None:
        speed_limits = [None] * len(frames)
    kept_paths, kept_frames, trajs, cand = [], [], [], []
    for frame, start, limit in zip(frames, starts, speed_limits):
        c = sample_path(frame, start, cfg, limit, substeps)
        L, J = len(c["lon_targets"]), len(c["lat_targets"])
        if L == 0:
            continue
        masks = violation_masks(c["v"], c["a"], c["kappa"], c["x"], c["y"], graph.obstacles, cfg)
        bad = np.zeros(c["v"].shape, dtype=bool)
        for m in masks.values():
            bad |= m
        ok = ~bad.any(axis=-1)
        out = slice(substeps - 1, None, substeps)
        if discrete_check and ok.any():
            xy = np.stack([c["x"][..., out], c["y"][..., out]], axis=-1)
            kd = index_spline_curvature(xy)
            ok &= ~np.any(kd > cfg.kappa_max, axis=-1)
        if not ok.any():
            log.debug("path %s unreachable: no feasible sample", frame.path.segment_ids)
            continue
        pidx = len(kept_paths)
        kept_paths.append(frame.path)
        kept_frames.append(frame)
        cand.append(L * J)
        t_out = c["t"][out]
        for li, lj in zip(*np.nonzero(ok)):
            trajs.append(Trajectory(
                pidx, t_out, c["x"][li, lj, out], c["y"][li, lj, out], c["v"][li, lj, out],
                c["a"][li, lj, out], c["kappa"][li, lj, out], c["theta"][li, lj, out],
                np.array(c["s"][li, lj, out]), np.array(c["d"][li, lj, out]), int(li), int(lj),
            ))
    if not trajs:
        raise EmptyFeasibleSet("no feasible trajectory on any reference path")
    return FeasibleSet(kept_paths, kept_frames, trajs, cand)


def _root_speed_limit(graph: LaneGraph, path: ReferencePath, position) -> float | None:
    best = min(path.segment_ids,
               key=lambda sid: closest_point_on_polyline(position, graph.segments[sid].centerline)[0])
    return graph.segments[best].speed_limit


def generate_for_state(paths: Sequence[ReferencePath], state: AgentState, graph: LaneGraph,
                       cfg: Config) -> FeasibleSet:
    """Build frames, project the target onto each, then generate.

    Paths the state cannot be projected onto (too far laterally, or beyond the
    reference's centre of curvature) are treated as unreachable.
    """
    frames, starts, limits = [], [], []
    for p in paths:
        frame = FrenetFrame(p)
        try:
            start = frame.project(state, max_offset=2.0 * cfg.lane_width)
        except PrimeError as exc:
            log.debug("skipping path %s: %s", p.segment_ids, exc)
            continue
        frames.append(frame)
        starts.append(start)
        limits.append(_root_speed_limit(graph, p, state.position))
    if not frames:
        raise EmptyFeasibleSet("target cannot be projected onto any reference path")
    return generate(frames, starts, graph, cfg, limits)
