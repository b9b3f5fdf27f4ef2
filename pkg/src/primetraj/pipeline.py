"""End-to-end prediction: track preprocessing, state estimation, path search,
trajectory generation, scoring and selection; plus the evaluation harness."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import PrimeError
from .estimation import SLOW_SPEED, KalmanConfig, drop_track, estimate_state, pad_track
from .evaluator.features import SceneFeatures, build_scene_features
from .evaluator.model import ModelParams, make_labels, score
from .evaluator.training import TrainingExample
from .generator import FeasibleSet, generate_for_state
from .metrics import MetricsReport, aggregate, compute_metrics
from .path_search import closest_point_on_polyline, find_reference_paths
from .scene import AgentState, PredictionSet, Scenario, Track
from .selection import nms_select

log = logging.getLogger(__name__)

FILL_MODES = ("nearest", "zero")


def fill_track(track: Track, mode: str = "nearest") -> Track:
    """Give unobserved slots usable coordinates.

    "nearest" copies the nearest observed sample; "zero" writes the world
    origin, which is the no-padding ablation.
    """
    if mode == "nearest":
        return pad_track(track)
    if mode == "zero":
        pos = np.where(track.observed[:, None], track.positions, 0.0)
        return Track(track.agent_id, pos, track.observed, track.actor_type)
    raise ValueError(f"unknown fill mode {mode!r}; expected one of {FILL_MODES}")


def drop_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def lane_heading(scenario: Scenario, position, radius: float) -> float | None:
    """Tangent heading of the nearest lane within ``radius``, if any."""
    best = None
    for seg in scenario.lane_graph.segments.values():
        dist, _, tangent, _ = closest_point_on_polyline(position, seg.centerline)
        if dist <= radius and (best is None or dist < best[0]):
            best = (dist, math.atan2(tangent[1], tangent[0]))
    return None if best is None else best[1]


def estimate_target(scenario: Scenario, track: Track, kc: KalmanConfig = KalmanConfig()) -> AgentState:
    """Provided current state if the scenario carries one, else a filter estimate."""
    if scenario.target_current_state is not None:
        return scenario.target_current_state
    cfg = scenario.config
    dt = 1.0 / cfg.frame_rate
    st = estimate_state(track, kc, dt)
    if st.speed < SLOW_SPEED:
        heading = lane_heading(scenario, st.position, cfg.localization_radius)
        if heading is not None:
            st = estimate_state(track, kc, dt, fallback_heading=heading)
    return st


def generate_candidates(scenario: Scenario, state: AgentState) -> FeasibleSet:
    cfg = scenario.config
    paths = find_reference_paths(scenario.lane_graph, state, cfg)
    return generate_for_state(paths, state, scenario.lane_graph, cfg)


@dataclass
class PreparedScene:
    scenario: Scenario
    target_track: Track  # after drop + fill
    state: AgentState
    feasible: FeasibleSet
    features: SceneFeatures
    timings: dict[str, float] = field(default_factory=dict)


def prepare(scenario: Scenario, drop_rate: float = 0.0, seed=0, fill: str = "nearest",
            kc: KalmanConfig = KalmanConfig()) -> PreparedScene:
    """Everything up to (and excluding) the learned scoring."""
    timings = {}
    t0 = time.perf_counter()
    target = scenario.target_track
    if drop_rate > 0:
        target = drop_track(target, drop_rate, seed)
    target = fill_track(target, fill)
    timings["preprocess"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    state = estimate_target(scenario, target, kc)
    timings["estimate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    fs = generate_candidates(scenario, state)
    timings["generate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    neighbors = [fill_track(t, fill) for t in scenario.neighbor_tracks]
    feats = build_scene_features(target, neighbors, fs)
    timings["features"] = time.perf_counter() - t0
    return PreparedScene(scenario, target, state, fs, feats, timings)


# a scorer maps a prepared scene to one gamma per feasible trajectory
Scorer = Union[ModelParams, Callable[[PreparedScene], np.ndarray]]


def oracle_scorer(tau: float | None = None) -> Callable[[PreparedScene], np.ndarray]:
    """Scores equal to the soft labels against the scenario's ground truth.

    An upper bound for any learned evaluator; needs ground truth.
    """

    def scorer(prepared: PreparedScene) -> np.ndarray:
        sc = prepared.scenario
        if sc.ground_truth is None:
            raise PrimeError(f"scenario {sc.scenario_id!r} has no ground truth for oracle scoring")
        t = sc.config.label_temperature if tau is None else tau
        return make_labels(prepared.feasible.positions(), sc.ground_truth, t)

    return scorer


def _gamma(scorer: Scorer, prepared: PreparedScene) -> np.ndarray:
    if isinstance(scorer, ModelParams):
        return score(scorer, prepared.features)
    return np.asarray(scorer(prepared), dtype=float)


@dataclass
class PipelineResult:
    prediction: PredictionSet
    gamma: np.ndarray
    prepared: PreparedScene

    @property
    def feasible(self) -> FeasibleSet:
        return self.prepared.feasible


def select(prepared: PreparedScene, params: Scorer, k: int | None = None,
           nms_threshold: float | None = None) -> PipelineResult:
    cfg = prepared.scenario.config
    t0 = time.perf_counter()
    gamma = _gamma(params, prepared)
    prepared.timings["score"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    pred = nms_select(prepared.feasible.trajectories, gamma, k or cfg.num_modes,
                      cfg.nms_threshold if nms_threshold is None else nms_threshold)
    prepared.timings["select"] = time.perf_counter() - t0
    return PipelineResult(pred, gamma, prepared)


def predict(scenario: Scenario, params: Scorer, drop_rate: float = 0.0, seed=0,
            fill: str = "nearest", k: int | None = None, nms_threshold: float | None = None,
            kc: KalmanConfig = KalmanConfig()) -> PipelineResult:
    """Run the full pipeline on one scenario."""
    return select(prepare(scenario, drop_rate, seed, fill, kc), params, k, nms_threshold)


def training_example(scenario: Scenario, drop_rate: float = 0.0, seed=0, fill: str = "nearest",
                     tau: float | None = None) -> TrainingExample:
    if scenario.ground_truth is None:
        raise PrimeError(f"scenario {scenario.scenario_id!r} has no ground truth")
    prep = prepare(scenario, drop_rate, seed, fill)
    psi = make_labels(prep.feasible.positions(), scenario.ground_truth,
                      scenario.config.label_temperature if tau is None else tau)
    return TrainingExample(prep.features, psi, scenario.scenario_id)


def build_training_set(scenarios: Sequence[Scenario], max_drop_rate: float = 0.0, seed: int = 0,
                       copies: int = 1, tau: float | None = None) -> list[TrainingExample]:
    """Training examples; with max_drop_rate > 0 each copy of a scenario gets a
    drop rate drawn uniformly from [0, max_drop_rate]. Scenarios that fail
    (no root lane, empty feasible set, ...) are skipped with a log message."""
    rng = np.random.default_rng(seed)
    out = []
    for i, sc in enumerate(scenarios):
        for c in range(copies):
            rate = float(rng.uniform(0.0, max_drop_rate)) if max_drop_rate > 0 else 0.0
            try:
                out.append(training_example(sc, rate, drop_seed(seed, i * copies + c), tau=tau))
            except PrimeError as exc:
                log.warning("skipping scenario %s: %s", sc.scenario_id or i, exc)
    return out


@dataclass
class ScenarioOutcome:
    scenario_id: str
    report: MetricsReport | None
    error: str | None = None
    result: PipelineResult | None = None


@dataclass
class HarnessReport:
    aggregate: MetricsReport
    outcomes: list[ScenarioOutcome]

    @property
    def failures(self) -> list[ScenarioOutcome]:
        return [o for o in self.outcomes if o.report is None]


def harness(scenarios: Sequence[Scenario], params: Scorer, drop_rate: float = 0.0,
            seed: int = 0, fill: str = "nearest", k: int | None = None,
            nms_threshold: float | None = None, keep_results: bool = False) -> HarnessReport:
    """Pipeline + metrics over a suite; per-scenario failures are recorded and
    excluded from the aggregate."""
    if not scenarios:
        raise ValueError("harness needs at least one scenario")
    outcomes = []
    for i, sc in enumerate(scenarios):
        sid = sc.scenario_id or str(i)
        if sc.ground_truth is None:
            outcomes.append(ScenarioOutcome(sid, None, "no ground truth"))
            continue
        try:
            res = predict(sc, params, drop_rate, drop_seed(seed, i), fill, k, nms_threshold)
            rep = compute_metrics(res.prediction, sc.ground_truth, sc.config)
        except PrimeError as exc:
            outcomes.append(ScenarioOutcome(sid, None, f"{type(exc).__name__}: {exc}"))
            continue
        outcomes.append(ScenarioOutcome(sid, rep, None, res if keep_results else None))
    reports = [o.report for o in outcomes if o.report is not None]
    return HarnessReport(aggregate(reports, len(outcomes) - len(reports)), outcomes)
