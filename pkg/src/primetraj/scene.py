"""Domain types and JSON I/O for maps, agent tracks, scenarios and predictions.

All containers are treated as immutable once built; arrays are flagged
read-only where they are owned by the container.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Mapping, Sequence

import numpy as np

from .config import Config
from .errors import ConfigError, ScenarioError

ACTOR_TYPES = ("vehicle", "other")
FULL_STATE_KEYS = ("v", "a", "kappa", "theta", "s", "d")


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AgentState:
    position: np.ndarray
    heading: float
    speed: float
    turn_rate: float = 0.0
    actor_type: str = "vehicle"
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", _frozen(self.position))
        object.__setattr__(self, "heading", wrap_angle(self.heading))
        if self.position.shape != (2,) or not np.all(np.isfinite(self.position)):
            raise ScenarioError("AgentState.position must be a finite (x, y) pair")
        if not (math.isfinite(self.speed) and self.speed >= 0):
            raise ScenarioError(f"AgentState.speed must be >= 0 (got {self.speed!r})")
        if self.actor_type not in ACTOR_TYPES:
            raise ScenarioError(f"AgentState.actor_type must be one of {ACTOR_TYPES}")


@dataclass(frozen=True)
class Track:
    """Fixed-rate observed positions; ``observed[k]`` is False for padded slots."""

    agent_id: str
    positions: np.ndarray  # (N, 2)
    observed: np.ndarray  # (N,) bool
    actor_type: str = "vehicle"

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(self.positions))
        object.__setattr__(self, "observed", _frozen(self.observed, dtype=bool))
        p, m = self.positions, self.observed
        if p.ndim != 2 or p.shape[1] != 2 or len(p) == 0:
            raise ScenarioError(f"track {self.agent_id}: positions must be (N, 2)")
        if m.shape != (len(p),):
            raise ScenarioError(f"track {self.agent_id}: observed mask length mismatch")
        if not np.all(np.isfinite(p)):
            raise ScenarioError(f"track {self.agent_id}: non-finite position")
        if not m[-1]:
            raise ScenarioError(f"track {self.agent_id}: final sample must be observed")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def last_position(self) -> np.ndarray:
        return self.positions[-1]


@dataclass(frozen=True)
class LaneSegment:
    id: str
    centerline: np.ndarray  # (M, 2)
    predecessors: tuple[str, ...] = ()
    successors: tuple[str, ...] = ()
    speed_limit: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "centerline", _frozen(self.centerline))
        object.__setattr__(self, "predecessors", tuple(self.predecessors))
        object.__setattr__(self, "successors", tuple(self.successors))
        c = self.centerline
        if c.ndim != 2 or c.shape[1] != 2 or len(c) < 2:
            raise ScenarioError(f"segment {self.id}: centerline needs >= 2 (x, y) points")
        if not np.all(np.isfinite(c)):
            raise ScenarioError(f"segment {self.id}: non-finite centerline point")
        if np.any(np.hypot(*np.diff(c, axis=0).T) <= 0):
            raise ScenarioError(f"segment {self.id}: consecutive centerline points coincide")
        if self.speed_limit is not None and not (
            math.isfinite(self.speed_limit) and self.speed_limit > 0
        ):
            raise ScenarioError(f"segment {self.id}: speed_limit must be positive")

    @property
    def length(self) -> float:
        return float(np.hypot(*np.diff(self.centerline, axis=0).T).sum())


def polygon_signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _is_convex(poly: np.ndarray) -> bool:
    e = np.roll(poly, -1, axis=0) - poly
    cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    return bool(np.all(cross >= -1e-12) or np.all(cross <= 1e-12))


@dataclass(frozen=True)
class LaneGraph:
    segments: Mapping[str, LaneSegment]
    obstacles: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", dict(self.segments))
        object.__setattr__(self, "obstacles", tuple(_frozen(o) for o in self.obstacles))
        segs = self.segments
        for sid, seg in segs.items():
            if sid != seg.id:
                raise ScenarioError(f"segment key {sid!r} does not match id {seg.id!r}")
            for other in seg.successors:
                if other not in segs:
                    raise ScenarioError(f"segment {sid}: successor {other!r} does not resolve")
                if sid not in segs[other].predecessors:
                    raise ScenarioError(
                        f"segment {sid}: successor {other!r} does not list it as predecessor"
                    )
            for other in seg.predecessors:
                if other not in segs:
                    raise ScenarioError(f"segment {sid}: predecessor {other!r} does not resolve")
                if sid not in segs[other].successors:
                    raise ScenarioError(
                        f"segment {sid}: predecessor {other!r} does not list it as successor"
                    )
        for i, poly in enumerate(self.obstacles):
            if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
                raise ScenarioError(f"obstacle {i}: polygon needs >= 3 (x, y) vertices")
            if not np.all(np.isfinite(poly)):
                raise ScenarioError(f"obstacle {i}: non-finite vertex")
            if abs(polygon_signed_area(poly)) < 1e-9:
                raise ScenarioError(f"obstacle {i}: degenerate polygon (zero area)")
            if not _is_convex(poly):
                raise ScenarioError(f"obstacle {i}: polygon is not convex")

    def __len__(self) -> int:
        return len(self.segments)


@dataclass(frozen=True)
class Scenario:
    lane_graph: LaneGraph
    tracks: tuple[Track, ...]
    target_index: int
    config: Config = field(default_factory=Config)
    target_current_state: AgentState | None = None
    ground_truth: np.ndarray | None = None  # (n_gt_steps, 2)
    scenario_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))
        if self.ground_truth is not None:
            object.__setattr__(self, "ground_truth", _frozen(self.ground_truth))
        cfg = self.config
        if not 0 <= self.target_index < len(self.tracks):
            raise ScenarioError("scenario must contain exactly one target track")
        for tr in self.tracks:
            if len(tr) != cfg.n_obs_steps:
                raise ScenarioError(
                    f"track {tr.agent_id}: length {len(tr)} != observed_horizon*frame_rate "
                    f"= {cfg.n_obs_steps}"
                )
        gt = self.ground_truth
        if gt is not None:
            if gt.ndim != 2 or gt.shape != (cfg.n_gt_steps, 2):
                raise ScenarioError(
                    f"ground_truth must have {cfg.n_gt_steps} (x, y) rows, got shape {gt.shape}"
                )
            if not np.all(np.isfinite(gt)):
                raise ScenarioError("ground_truth contains non-finite values")

    @property
    def target_track(self) -> Track:
        return self.tracks[self.target_index]

    @property
    def neighbor_tracks(self) -> tuple[Track, ...]:
        return tuple(t for i, t in enumerate(self.tracks) if i != self.target_index)

    def with_tracks(self, tracks: Sequence[Track]) -> "Scenario":
        return Scenario(
            self.lane_graph, tuple(tracks), self.target_index, self.config,
            self.target_current_state, self.ground_truth, self.scenario_id,
        )


@dataclass(frozen=True)
class Trajectory:
    """Time-discretized future state along one reference path.

    ``v`` is the speed signed by the direction of travel along the path: it is
    negative wherever the longitudinal velocity is negative (reversing), so the
    range check ``v >= 0`` also rejects backward motion.
    """

    path_index: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    a: np.ndarray
    kappa: np.ndarray
    theta: np.ndarray
    s: np.ndarray
    d: np.ndarray
    lon_index: int = -1
    lat_index: int = -1

    def __len__(self) -> int:
        return len(self.t)

    @property
    def positions(self) -> np.ndarray:
        return np.stack([self.x, self.y], axis=-1)

    def full_state(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in FULL_STATE_KEYS}


@dataclass(frozen=True)
class PredictionSet:
    """K selected trajectories with normalized probabilities, best first."""

    positions: np.ndarray  # (K, N, 2)
    probabilities: np.ndarray  # (K,)
    full_state: Mapping[str, np.ndarray] | None = None  # each (K, N)
    trajectories: tuple[Trajectory, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(self.positions))
        object.__setattr__(self, "probabilities", _frozen(self.probabilities))
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        k = len(self.probabilities)
        if k < 1:
            raise ScenarioError("prediction set must hold at least one trajectory")
        if self.positions.ndim != 3 or self.positions.shape[0] != k or self.positions.shape[2] != 2:
            raise ScenarioError("positions must have shape (K, N, 2) matching probabilities")
        p = self.probabilities
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise ScenarioError("probabilities must be finite and strictly positive")
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise ScenarioError(f"probabilities sum to {p.sum()!r}, not 1")
        if self.full_state is not None:
            fs = {}
            for key in FULL_STATE_KEYS:
                if key not in self.full_state:
                    raise ScenarioError(f"full_state missing {key!r}")
                arr = _frozen(self.full_state[key])
                if arr.shape != self.positions.shape[:2]:
                    raise ScenarioError(f"full_state[{key!r}] has wrong shape {arr.shape}")
                fs[key] = arr
            object.__setattr__(self, "full_state", fs)

    def __len__(self) -> int:
        return len(self.probabilities)

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory], probabilities) -> "PredictionSet":
        if len(trajs) == 0:
            raise ScenarioError("prediction set must hold at least one trajectory")
        positions = np.stack([t.positions for t in trajs])
        full = {k: np.stack([getattr(t, k) for t in trajs]) for k in FULL_STATE_KEYS}
        return cls(positions, np.asarray(probabilities, dtype=float), full, tuple(trajs))


# --------------------------------------------------------------------------- I/O


def _parse_json(text: str | bytes, what: str) -> Any:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ScenarioError(f"{what}: input is not UTF-8 ({exc})") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        lines = text.splitlines()
        context = lines[exc.lineno - 1] if 0 < exc.lineno <= len(lines) else ""
        raise ScenarioError(
            f"{what}: JSON parse error at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}\n    {context.strip()[:120]}"
        ) from None


def _need(obj: Any, key: str, where: str) -> Any:
    if not isinstance(obj, dict):
        raise ScenarioError(f"{where} must be an object")
    if key not in obj:
        raise ScenarioError(f"{where}.{key} is required")
    return obj[key]


def _number(v: Any, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ScenarioError(f"{where} must be a finite number")
    return float(v)


def _ident(v: Any, where: str) -> str:
    if isinstance(v, bool) or not isinstance(v, (str, int)):
        raise ScenarioError(f"{where} must be a string or integer id")
    return str(v)


def _points(v: Any, where: str, min_len: int = 1) -> np.ndarray:
    if not isinstance(v, list) or len(v) < min_len:
        raise ScenarioError(f"{where} must be a list of at least {min_len} [x, y] pairs")
    out = np.empty((len(v), 2))
    for i, p in enumerate(v):
        if not isinstance(p, list) or len(p) != 2:
            raise ScenarioError(f"{where}[{i}] must be an [x, y] pair")
        out[i] = (_number(p[0], f"{where}[{i}][0]"), _number(p[1], f"{where}[{i}][1]"))
    return out


def _id_list(v: Any, where: str) -> tuple[str, ...]:
    if not isinstance(v, list):
        raise ScenarioError(f"{where} must be a list of ids")
    return tuple(_ident(x, f"{where}[{i}]") for i, x in enumerate(v))


def _lane_graph_from(doc: Any) -> LaneGraph:
    if not isinstance(doc, dict):
        raise ScenarioError("map must be an object")
    raw_segments = _need(doc, "segments", "map")
    if not isinstance(raw_segments, list) or not raw_segments:
        raise ScenarioError("map.segments must be a non-empty list")
    segments: dict[str, LaneSegment] = {}
    for i, raw in enumerate(raw_segments):
        where = f"map.segments[{i}]"
        sid = _ident(_need(raw, "id", where), f"{where}.id")
        if sid in segments:
            raise ScenarioError(f"{where}.id {sid!r} is duplicated")
        limit = raw.get("speed_limit")
        segments[sid] = LaneSegment(
            sid,
            _points(_need(raw, "centerline", where), f"{where}.centerline", 2),
            _id_list(raw.get("predecessors", []), f"{where}.predecessors"),
            _id_list(raw.get("successors", []), f"{where}.successors"),
            None if limit is None else _number(limit, f"{where}.speed_limit"),
        )
    obstacles = doc.get("obstacles", [])
    if not isinstance(obstacles, list):
        raise ScenarioError("map.obstacles must be a list of polygons")
    polys = [_points(o, f"map.obstacles[{i}]", 3) for i, o in enumerate(obstacles)]
    return LaneGraph(segments, tuple(polys))


def _track_from(raw: Any, where: str) -> tuple[Track, bool]:
    aid = _ident(_need(raw, "id", where), f"{where}.id")
    is_target = raw.get("is_target", False)
    if not isinstance(is_target, bool):
        raise ScenarioError(f"{where}.is_target must be a boolean")
    actor = raw.get("actor_type", "vehicle")
    if actor not in ACTOR_TYPES:
        raise ScenarioError(f"{where}.actor_type must be one of {ACTOR_TYPES}")
    samples = _need(raw, "track", where)
    if not isinstance(samples, list) or not samples:
        raise ScenarioError(f"{where}.track must be a non-empty list")
    pos = np.empty((len(samples), 2))
    obs = np.empty(len(samples), dtype=bool)
    for k, s in enumerate(samples):
        w = f"{where}.track[{k}]"
        pos[k] = (_number(_need(s, "x", w), f"{w}.x"), _number(_need(s, "y", w), f"{w}.y"))
        flag = s.get("observed", True)
        if not isinstance(flag, bool):
            raise ScenarioError(f"{w}.observed must be a boolean")
        obs[k] = flag
    if not obs[-1]:
        raise ScenarioError(f"{where}.track: final sample must be observed")
    return Track(aid, pos, obs, actor), is_target


def scenario_from_dict(doc: Any) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    try:
        cfg = Config.from_dict(doc.get("config"))
    except ConfigError as exc:
        raise ScenarioError(f"config: {exc}") from None
    graph = _lane_graph_from(_need(doc, "map", "scenario"))
    agents = _need(doc, "agents", "scenario")
    if not isinstance(agents, list) or not agents:
        raise ScenarioError("scenario.agents must be a non-empty list")
    tracks, targets = [], []
    for i, raw in enumerate(agents):
        tr, is_target = _track_from(raw, f"agents[{i}]")
        if is_target:
            targets.append(i)
        tracks.append(tr)
    if len(targets) != 1:
        raise ScenarioError(f"agents: exactly one target required, found {len(targets)}")
    gt = doc.get("ground_truth")
    gt_arr = None if gt is None else _points(gt, "ground_truth")
    state = None
    if doc.get("target_state") is not None:
        raw = doc["target_state"]
        w = "target_state"
        state = AgentState(
            np.array([_number(_need(raw, "x", w), f"{w}.x"), _number(_need(raw, "y", w), f"{w}.y")]),
            _number(_need(raw, "heading", w), f"{w}.heading"),
            _number(_need(raw, "speed", w), f"{w}.speed"),
            actor_type=tracks[targets[0]].actor_type,
        )
    sid = doc.get("id", "")
    return Scenario(
        graph, tuple(tracks), targets[0], cfg, state, gt_arr,
        _ident(sid, "id") if sid != "" else "",
    )


def load_scenario(source: str | bytes) -> Scenario:
    """Parse a scenario JSON document (text or UTF-8 bytes).

    Every type invariant is checked; any violation raises ScenarioError naming
    the offending field. Nothing is silently repaired.
    """
    return scenario_from_dict(_parse_json(source, "scenario"))


def load_scenario_file(path: str | os.PathLike) -> Scenario:
    data = Path(path).read_bytes()
    try:
        sc = load_scenario(data)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    if not sc.scenario_id:
        object.__setattr__(sc, "scenario_id", Path(path).stem)
    return sc


def scenario_to_dict(sc: Scenario, include_config: bool = True) -> dict[str, Any]:
    g = sc.lane_graph
    doc: dict[str, Any] = {}
    if sc.scenario_id:
        doc["id"] = sc.scenario_id
    doc["map"] = {
        "segments": [
            {
                "id": s.id,
                "centerline": s.centerline.tolist(),
                "predecessors": list(s.predecessors),
                "successors": list(s.successors),
                **({} if s.speed_limit is None else {"speed_limit": s.speed_limit}),
            }
            for s in g.segments.values()
        ],
        "obstacles": [o.tolist() for o in g.obstacles],
    }
    doc["agents"] = [
        {
            "id": t.agent_id,
            "is_target": i == sc.target_index,
            "actor_type": t.actor_type,
            "track": [
                {"x": float(p[0]), "y": float(p[1]), "observed": bool(m)}
                for p, m in zip(t.positions, t.observed)
            ],
        }
        for i, t in enumerate(sc.tracks)
    ]
    if sc.ground_truth is not None:
        doc["ground_truth"] = sc.ground_truth.tolist()
    if sc.target_current_state is not None:
        st = sc.target_current_state
        doc["target_state"] = {
            "x": float(st.position[0]), "y": float(st.position[1]),
            "heading": st.heading, "speed": st.speed,
        }
    if include_config and sc.config != Config():
        defaults = Config().to_dict()
        doc["config"] = {k: v for k, v in sc.config.to_dict().items() if defaults[k] != v}
    return doc


def save_scenario(sc: Scenario, destination: str | os.PathLike) -> None:
    Path(destination).write_text(json.dumps(scenario_to_dict(sc), indent=1) + "\n")


def predictions_to_dict(pred: PredictionSet) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "trajectories": pred.positions.tolist(),
        "probabilities": pred.probabilities.tolist(),
    }
    if pred.full_state is not None:
        fs = pred.full_state
        doc["full_state"] = [
            [{k: float(fs[k][i, j]) for k in FULL_STATE_KEYS} for j in range(pred.positions.shape[1])]
            for i in range(len(pred))
        ]
    return doc


def save_predictions(pred: PredictionSet, destination: str | os.PathLike | IO[str]) -> None:
    """Write a prediction set as JSON; floats are written at full precision."""
    if len(pred) < 1:
        raise ScenarioError("cannot save an empty prediction set")
    text = json.dumps(predictions_to_dict(pred)) + "\n"
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        Path(destination).write_text(text)


def predictions_from_dict(doc: Any) -> PredictionSet:
    trajs = _need(doc, "trajectories", "predictions")
    if not isinstance(trajs, list) or not trajs:
        raise ScenarioError("predictions.trajectories must be a non-empty list")
    rows = [_points(t, f"trajectories[{i}]") for i, t in enumerate(trajs)]
    if len({len(r) for r in rows}) != 1:
        raise ScenarioError("predictions.trajectories must all have the same length")
    positions = np.stack(rows)
    probs = _need(doc, "probabilities", "predictions")
    if not isinstance(probs, list):
        raise ScenarioError("predictions.probabilities must be a list")
    p = np.array([_number(x, f"probabilities[{i}]") for i, x in enumerate(probs)])
    full = None
    if doc.get("full_state") is not None:
        raw = doc["full_state"]
        if not isinstance(raw, list) or len(raw) != len(trajs):
            raise ScenarioError("full_state must have one entry per trajectory")
        full = {k: np.empty(positions.shape[:2]) for k in FULL_STATE_KEYS}
        for i, steps in enumerate(raw):
            if not isinstance(steps, list) or len(steps) != positions.shape[1]:
                raise ScenarioError(f"full_state[{i}] must have one entry per step")
            for j, st in enumerate(steps):
                for k in FULL_STATE_KEYS:
                    full[k][i, j] = _number(_need(st, k, f"full_state[{i}][{j}]"),
                                            f"full_state[{i}][{j}].{k}")
    return PredictionSet(positions, p, full)


def load_predictions(source: str | os.PathLike | bytes) -> PredictionSet:
    if isinstance(source, bytes):
        return predictions_from_dict(_parse_json(source, "predictions"))
    return predictions_from_dict(_parse_json(Path(source).read_bytes(), "predictions"))


def iter_scenario_files(directory: str | os.PathLike) -> list[Path]:
    """Scenario documents of a dataset directory, in sorted filename order."""
    return sorted(p for p in Path(directory).glob("*.json") if p.is_file())


def load_dataset(directory: str | os.PathLike) -> list[Scenario]:
    files = iter_scenario_files(directory)
    if not files:
        raise ScenarioError(f"{directory}: no scenario *.json files")
    return [load_scenario_file(p) for p in files]
