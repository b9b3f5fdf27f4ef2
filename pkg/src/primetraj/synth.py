"""Synthetic lane maps, agent motion and scenario suites.

Roads are built by integrating a piecewise-constant curvature profile, lanes
are lateral offsets of the road line, and agents drive along lane chains with
a smooth speed profile and an optional lane change. Everything is seeded.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np

from .config import Config
from .scene import AgentState, LaneGraph, LaneSegment, Scenario, Track, scenario_from_dict

LANE_SPACING = 4.0
HISTORY_NOISE = 0.05  # m, observation noise on tracks


def integrate_road(start, heading: float, pieces: Sequence[tuple[float, float]], step: float = 0.5):
    """Polyline of a road made of (length, curvature) pieces; returns points,
    unit headings (as angles) and arc length per point."""
    pts = [np.asarray(start, dtype=float)]
    hd = [heading]
    for length, kappa in pieces:
        n = max(1, int(math.ceil(length / step)))
        h = length / n
        for _ in range(n):
            th = hd[-1]
            mid = th + 0.5 * kappa * h
            # exact for constant curvature when using the chord direction
            chord = h if abs(kappa) < 1e-12 else 2.0 * math.sin(0.5 * kappa * h) / kappa
            pts.append(pts[-1] + chord * np.array([math.cos(mid), math.sin(mid)]))
            hd.append(th + kappa * h)
    pts = np.array(pts)
    s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    return pts, np.array(hd), s


def offset_line(pts, headings, offset: float) -> np.ndarray:
    normal = np.stack([-np.sin(headings), np.cos(headings)], axis=-1)
    return pts + offset * normal


def _split(line: np.ndarray, s: np.ndarray, cuts: Sequence[float]) -> list[np.ndarray]:
    """Cut a polyline at the given arc lengths (cut points shared by neighbors)."""
    bounds = [0.0, *cuts, s[-1]]
    out = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        inner = (s > a + 1e-9) & (s < b - 1e-9)
        pa = np.array([np.interp(a, s, line[:, 0]), np.interp(a, s, line[:, 1])])
        pb = np.array([np.interp(b, s, line[:, 0]), np.interp(b, s, line[:, 1])])
        out.append(np.vstack([pa, line[inner], pb]))
    return out


@dataclass
class World:
    graph: LaneGraph
    lanes: list[list[str]]  # segment ids of each through lane, in order
    description: str = ""


def random_world(rng: np.random.Generator) -> World:
    """Multi-lane road (straight, curved or S-shaped), optional exit fork."""
    n_lanes = int(rng.integers(1, 4))
    kind = rng.choice(["straight", "curve", "s-curve"])
    total = 320.0
    if kind == "straight":
        pieces = [(total, 0.0)]
    elif kind == "curve":
        r = float(rng.uniform(40, 200)) * rng.choice([-1, 1])
        lead = float(rng.uniform(60, 120))
        pieces = [(lead, 0.0), (total - lead, 1.0 / r)]
    else:
        r1 = float(rng.uniform(60, 200)) * rng.choice([-1, 1])
        r2 = -np.sign(r1) * float(rng.uniform(60, 200))
        pieces = [(100.0, 1.0 / r1), (100.0, 0.0), (120.0, 1.0 / r2)]
    start = rng.uniform(-500, 500, size=2)
    heading = float(rng.uniform(-math.pi, math.pi))
    pts, hd, s = integrate_road(start, heading, pieces)
    n_cut = 3
    cuts = sorted(float(c) for c in rng.uniform(40, total - 40, size=n_cut))
    cuts = [c for i, c in enumerate(cuts) if i == 0 or c - cuts[i - 1] > 20]
    segs: dict[str, dict] = {}
    lanes = []
    offsets = [LANE_SPACING * (k - (n_lanes - 1) / 2.0) for k in range(n_lanes)]
    for k, off in enumerate(offsets):
        line = offset_line(pts, hd, off)
        pieces_k = _split(line, s, cuts)
        ids = [f"l{k}s{j}" for j in range(len(pieces_k))]
        for j, (sid, c) in enumerate(zip(ids, pieces_k)):
            segs[sid] = {"centerline": c, "pred": [ids[j - 1]] if j else [], "succ": [ids[j + 1]] if j + 1 < len(ids) else []}
        lanes.append(ids)
    desc = f"{kind}, {n_lanes} lane(s)"
    if rng.random() < 0.4:
        # exit ramp branching off the rightmost lane at the first cut
        j = 0
        right = lanes[0][j]
        end = segs[right]["centerline"]
        d = end[-1] - end[-2]
        th = math.atan2(d[1], d[0])
        rr = float(rng.uniform(30, 80))
        bp, _, _ = integrate_road(end[-1], th, [(20.0, -1.0 / (2 * rr)), (100.0, -1.0 / rr)])
        segs["exit"] = {"centerline": bp, "pred": [right], "succ": []}
        segs[right]["succ"].append("exit")
        desc += ", exit"
    graph = LaneGraph({
        sid: LaneSegment(sid, v["centerline"], tuple(v["pred"]), tuple(v["succ"]))
        for sid, v in segs.items()
    })
    return World(graph, lanes, desc)


def chain_polyline(graph: LaneGraph, ids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    parts = []
    for k, sid in enumerate(ids):
        c = graph.segments[sid].centerline
        parts.append(c[1:] if k else c)
    pts = np.vstack(parts)
    keep = np.concatenate([[True], np.hypot(*np.diff(pts, axis=0).T) > 1e-9])
    pts = pts[keep]
    return pts, np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])


def random_route(graph: LaneGraph, start: str, rng: np.random.Generator) -> list[str]:
    route = [start]
    while graph.segments[route[-1]].successors:
        route.append(str(rng.choice(graph.segments[route[-1]].successors)))
    return route


def _along(pts, s_cum, s, d):
    """Positions at arc lengths s with lateral offset d on a polyline."""
    s = np.clip(s, 0.0, s_cum[-1])
    k = np.clip(np.searchsorted(s_cum, s, side="right") - 1, 0, len(pts) - 2)
    seg = pts[k + 1] - pts[k]
    ln = np.hypot(seg[:, 0], seg[:, 1])
    u = (s - s_cum[k]) / ln
    base = pts[k] + u[:, None] * seg
    normal = np.stack([-seg[:, 1], seg[:, 0]], axis=-1) / ln[:, None]
    return base + np.asarray(d)[:, None] * normal


def speed_profile(rng: np.random.Generator, v0: float, t: np.ndarray, a_range: float = 1.5):
    """Arc length over time with two random constant-acceleration phases."""
    t_switch = float(rng.uniform(t[0], t[-1]))
    a1, a2 = rng.uniform(-a_range, a_range, size=2)
    dt = np.diff(t, prepend=t[0])
    acc = np.where(t < t_switch, a1, a2)
    v = np.empty_like(t)
    s = np.empty_like(t)
    v[0], s[0] = v0, 0.0
    for i in range(1, len(t)):
        v[i] = max(0.0, v[i - 1] + acc[i] * dt[i])
        s[i] = s[i - 1] + 0.5 * (v[i] + v[i - 1]) * dt[i]
    return s, v


def lane_change_offset(t: np.ndarray, t0: float, duration: float, shift: float) -> np.ndarray:
    u = np.clip((t - t0) / duration, 0.0, 1.0)
    return shift * (10 * u**3 - 15 * u**4 + 6 * u**5)


def random_scenario(rng: np.random.Generator, cfg: Config = Config(), scenario_id: str = "",
                    world: World | None = None, lane_change_prob: float = 0.25,
                    n_neighbors: int | None = None) -> Scenario:
    """Target plus neighbours driving on a random world, with ground truth."""
    world = world or random_world(rng)
    g = world.graph
    n_obs, n_fut = cfg.n_obs_steps, cfg.n_gt_steps
    dt = 1.0 / cfg.frame_rate
    t = dt * np.arange(-(n_obs - 1), n_fut + 1)
    lane = int(rng.integers(len(world.lanes)))
    route = random_route(g, world.lanes[lane][0], rng)
    pts, s_cum = chain_polyline(g, route)
    v0 = float(rng.uniform(2.0, 20.0))
    s_rel, _ = speed_profile(rng, v0, t)
    s_now_min = s_rel[n_obs - 1] - s_rel[0] + 5.0
    s_now = float(rng.uniform(s_now_min, max(s_now_min + 1.0, s_cum[-1] * 0.45)))
    s_abs = s_now + s_rel - s_rel[n_obs - 1]
    d = np.zeros_like(t)
    if rng.random() < lane_change_prob:
        neighbors_lanes = [k for k in (lane - 1, lane + 1) if 0 <= k < len(world.lanes)]
        if neighbors_lanes:
            to = int(rng.choice(neighbors_lanes))
            d = lane_change_offset(t, float(rng.uniform(-1.0, 1.5)), float(rng.uniform(3.0, 5.0)),
                                   LANE_SPACING * (to - lane))
    xy = _along(pts, s_cum, s_abs, d)
    hist = xy[:n_obs] + rng.normal(0.0, HISTORY_NOISE, size=(n_obs, 2))
    hist[-1] = xy[n_obs - 1] + rng.normal(0.0, HISTORY_NOISE, size=2)
    tracks = [Track("target", hist, np.ones(n_obs, bool))]
    n_nb = int(rng.integers(0, 4)) if n_neighbors is None else n_neighbors
    for k in range(n_nb):
        nl = int(rng.integers(len(world.lanes)))
        nroute = random_route(g, world.lanes[nl][0], rng)
        npts, ns = chain_polyline(g, nroute)
        nv = float(rng.uniform(0.0, 20.0))
        ns_now = float(rng.uniform(nv * 2.0 + 2.0, max(nv * 2.0 + 3.0, ns[-1] * 0.6)))
        nxy = _along(npts, ns, ns_now + nv * t[:n_obs], np.zeros(n_obs))
        tracks.append(Track(f"n{k}", nxy + rng.normal(0.0, HISTORY_NOISE, size=(n_obs, 2)),
                            np.ones(n_obs, bool)))
    return Scenario(g, tuple(tracks), 0, cfg, None, xy[n_obs:], scenario_id)


def random_suite(n: int, seed: int, cfg: Config = Config(), prefix: str = "syn",
                 **kwargs) -> list[Scenario]:
    rng = np.random.default_rng(seed)
    return [random_scenario(rng, cfg, f"{prefix}{i:04d}", **kwargs) for i in range(n)]


# ------------------------------------------------------------------- fixtures

def three_lane_document() -> dict:
    """Three parallel lanes, 9 segments; the right lane merges into the middle one."""
    y = {"L": LANE_SPACING, "M": 0.0, "R": -LANE_SPACING}

    def line(x0, x1, yy, step=5.0):
        xs = np.arange(x0, x1 + 1e-9, step)
        return [[float(x), yy] for x in xs]

    merge = [[100.0 + 30.0 * u, -LANE_SPACING * (1.0 - (3 * u**2 - 2 * u**3))]
             for u in np.linspace(0.0, 1.0, 16)]
    segments = [
        {"id": "L1", "centerline": line(0, 65, y["L"]), "predecessors": [], "successors": ["L2"]},
        {"id": "L2", "centerline": line(65, 130, y["L"]), "predecessors": ["L1"], "successors": ["L3"]},
        {"id": "L3", "centerline": line(130, 260, y["L"]), "predecessors": ["L2"], "successors": []},
        {"id": "M1", "centerline": line(0, 65, 0.0), "predecessors": [], "successors": ["M2"]},
        {"id": "M2", "centerline": line(65, 130, 0.0), "predecessors": ["M1"], "successors": ["M3"]},
        {"id": "M3", "centerline": line(130, 260, 0.0), "predecessors": ["M2", "RM"], "successors": []},
        {"id": "R1", "centerline": line(0, 60, y["R"]), "predecessors": [], "successors": ["R2"]},
        {"id": "R2", "centerline": line(60, 100, y["R"]), "predecessors": ["R1"], "successors": ["RM"]},
        {"id": "RM", "centerline": merge, "predecessors": ["R2"], "successors": ["M3"]},
    ]
    t_hist = 0.1 * np.arange(-19, 1)
    t_fut = 0.1 * np.arange(1, 31)

    def track(x0, yy, v):
        return [{"x": float(x0 + v * tt), "y": yy, "observed": True} for tt in t_hist]

    return {
        "id": "three_lane",
        "map": {"segments": segments, "obstacles": []},
        "agents": [
            {"id": "target", "is_target": True, "track": track(40.0, 0.0, 10.0)},
            {"id": "left", "is_target": False, "track": track(55.0, y["L"], 12.0)},
            {"id": "right", "is_target": False, "track": track(25.0, y["R"], 8.0)},
        ],
        "ground_truth": [[float(40.0 + 10.0 * tt), 0.0] for tt in t_fut],
    }


def uturn_document() -> dict:
    """A single lane that folds back on itself in a 2 m hairpin right ahead
    of a fast target: no sampled trajectory can respect the curvature bound."""
    r = 2.0
    straight_in = [[float(x), 0.0] for x in np.arange(-30.0, 0.01, 2.0)]
    arc = [[r * math.sin(a), r - r * math.cos(a)] for a in np.linspace(0, math.pi, 13)[1:]]
    straight_out = [[float(x), 2 * r] for x in np.arange(-2.0, -60.01, -2.0)]
    t_hist = 0.1 * np.arange(-19, 1)
    v = 20.0
    return {
        "id": "uturn",
        "config": {"path_point_spacing": 0.5},
        "map": {"segments": [{"id": "U", "centerline": straight_in + arc + straight_out,
                              "predecessors": [], "successors": []}], "obstacles": []},
        "agents": [{"id": "target", "is_target": True,
                    "track": [{"x": float(-1.0 + v * tt), "y": 0.0, "observed": True} for tt in t_hist]}],
    }


def load_bundled(name: str) -> Scenario:
    """Load a fixture shipped in the package data directory."""
    text = resources.files("primetraj").joinpath("data", f"{name}.json").read_text()
    return scenario_from_dict(json.loads(text))


def target_lane_sample(fs, state: AgentState, cfg: Config):
    """Index of the generated sample closest to "keep lane, keep speed": on the
    path where the target sits nearest the centerline, end offset 0 and end
    speed nearest the current longitudinal speed."""
    best_path, best_d = None, math.inf
    for i, frame in enumerate(fs.frames):
        _, d = frame.project_points(state.position[None])
        if abs(d[0]) < best_d:
            best_path, best_d = i, abs(float(d[0]))
    lat_mid = (cfg.n_lat_samples - 1) // 2
    frame = fs.frames[best_path]
    s_dot0 = frame.project(state).s_dot
    cands = [(abs(t.v[-1] - s_dot0), k) for k, t in enumerate(fs.trajectories)
             if t.path_index == best_path and t.lat_index == lat_mid]
    if not cands:
        return None
    return min(cands)[1]


def toy_training_set(n: int = 10, seed: int = 0, cfg: Config = Config()) -> list[Scenario]:
    """Scenarios whose ground truth is exactly one of the generator's own
    samples (keep lane, keep speed), so a perfect evaluator can reach MR = 0."""
    from .pipeline import prepare  # local import: pipeline depends on this module's users

    rng = np.random.default_rng(seed)
    out: list[Scenario] = []
    while len(out) < n:
        sc = random_scenario(rng, cfg, f"toy{len(out):03d}", lane_change_prob=0.0)
        prep = prepare(sc)
        k = target_lane_sample(prep.feasible, prep.state, cfg)
        if k is None:
            continue
        gt = prep.feasible.trajectories[k].positions
        out.append(Scenario(sc.lane_graph, sc.tracks, sc.target_index, cfg, None, gt, sc.scenario_id))
    return out
