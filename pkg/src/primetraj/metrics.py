"""Displacement / miss-rate metrics and the spline-curvature feasibility audit."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .config import Config
from .errors import DegenerateInput
from .scene import PredictionSet

AUDIT_KAPPA = 1.0 / 3.0
# per-step displacement (m) below which a knot counts as "at rest"
REST_STEP = 1e-3


@dataclass(frozen=True)
class MetricsReport:
    min_ade: float
    min_fde: float
    miss_rate: float
    p_min_ade: float
    p_min_fde: float
    infeasibility: float
    n_scenarios: int = 1
    n_predictions: int = 0
    n_infeasible: int = 0
    n_failed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AuditResult:
    feasible: bool
    max_curvature: float
    n_knots_checked: int


def knot_curvatures(positions, rest_step: float = REST_STEP) -> np.ndarray:
    """Curvature at each knot of natural cubic splines x(k), y(k) over the
    step index k. Knots where the spline speed is below ``rest_step`` per
    step are returned as NaN (curvature undefined at rest)."""
    pts = np.asarray(positions, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise DegenerateInput("curvature audit needs at least 3 (x, y) points")
    sp = CubicSpline(np.arange(len(pts), dtype=float), pts, bc_type="natural", axis=0)
    k = np.arange(len(pts), dtype=float)
    d1, d2 = sp(k, 1), sp(k, 2)
    speed = np.hypot(d1[:, 0], d1[:, 1])
    cross = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    moving = speed >= rest_step
    out = np.full(len(pts), np.nan)
    out[moving] = cross[moving] / speed[moving] ** 3
    return out


def audit_curvature(positions, kappa_threshold: float = AUDIT_KAPPA,
                    rest_step: float = REST_STEP, strict: bool = False) -> AuditResult:
    """Infeasible iff the spline curvature exceeds the threshold at any knot.

    Knots at rest are skipped; a sequence entirely at rest is feasible. With
    ``strict=True`` exactly repeated consecutive points raise DegenerateInput.
    """
    pts = np.asarray(positions, dtype=float)
    if strict and len(pts) >= 2 and np.any(np.all(np.diff(pts, axis=0) == 0, axis=1)):
        raise DegenerateInput("repeated consecutive points (agent at rest)")
    kappa = knot_curvatures(pts, rest_step)
    valid = kappa[np.isfinite(kappa)]
    if len(valid) == 0:
        return AuditResult(True, 0.0, 0)
    kmax = float(valid.max())
    return AuditResult(kmax <= kappa_threshold, kmax, len(valid))


def compute_metrics(pred: PredictionSet, ground_truth, cfg: Config = Config(),
                    kappa_threshold: float = AUDIT_KAPPA) -> MetricsReport:
    """Single-scenario metrics; best = minimum endpoint error (first on ties)."""
    gt = np.asarray(ground_truth, dtype=float)
    pos = pred.positions
    if pos.shape[1:] != gt.shape:
        raise ValueError(f"ground truth shape {gt.shape} does not match predictions {pos.shape[1:]}")
    err = np.linalg.norm(pos - gt, axis=-1)  # (K, N)
    fde = err[:, -1]
    best = int(np.argmin(fde))
    min_fde = float(fde[best])
    min_ade = float(err[best].mean())
    nlp = -math.log(float(pred.probabilities[best]))
    n_bad = sum(not audit_curvature(p, kappa_threshold).feasible for p in pos)
    return MetricsReport(
        min_ade, min_fde, 1.0 if min_fde > cfg.miss_threshold else 0.0,
        min_ade + nlp, min_fde + nlp, n_bad / len(pos), 1, len(pos), n_bad, 0,
    )


def aggregate(reports: Sequence[MetricsReport], n_failed: int = 0) -> MetricsReport:
    """Means over scenarios; MR is the miss ratio; infeasibility is pooled over
    all predictions."""
    if not reports:
        nan = float("nan")
        return MetricsReport(nan, nan, nan, nan, nan, nan, 0, 0, 0, n_failed)
    n_pred = sum(r.n_predictions for r in reports)
    n_bad = sum(r.n_infeasible for r in reports)

    def mean(key: str) -> float:
        return float(np.mean([getattr(r, key) for r in reports]))

    return MetricsReport(
        mean("min_ade"), mean("min_fde"), mean("miss_rate"), mean("p_min_ade"),
        mean("p_min_fde"), n_bad / n_pred if n_pred else 0.0, len(reports), n_pred, n_bad,
        n_failed,
    )
