"""Target state estimation from a discrete track, plus the drop / pad scheme
used to simulate imperfect tracking."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientObservations
from .scene import AgentState, Track

# below this speed the velocity direction is not a usable heading
SLOW_SPEED = 0.5


@dataclass(frozen=True)
class KalmanConfig:
    process_noise: float = 0.1  # white-acceleration spectral density, (m/s^2)^2 s
    measurement_noise: float = 0.25  # position variance, m^2
    initial_covariance: float = 0.25  # position variance of the first fix, m^2

    def __post_init__(self):
        for name in ("process_noise", "measurement_noise", "initial_covariance"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"KalmanConfig.{name} must be strictly positive")


def _cv_matrices(dt: float, q: float) -> tuple[np.ndarray, np.ndarray]:
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    blk = q * np.array([[dt**3 / 3, dt**2 / 2], [dt**2 / 2, dt]])
    Q = np.zeros((4, 4))
    Q[np.ix_([0, 2], [0, 2])] = blk
    Q[np.ix_([1, 3], [1, 3])] = blk
    return F, Q


def kalman_filter(track: Track, dt: float, kc: KalmanConfig = KalmanConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Constant-velocity filter over [x, y, vx, vy]; returns final (mean, cov).

    The state is initialized from the first two observed samples (two-point
    difference), so an exact constant-velocity track is tracked without
    transient. Unobserved samples get a prediction step only.
    """
    idx = np.flatnonzero(track.observed)
    if len(idx) < 2:
        raise InsufficientObservations(
            f"track {track.agent_id}: {len(idx)} observed sample(s), need at least 2"
        )
    p = track.positions
    k0, k1 = int(idx[0]), int(idx[1])
    gap = (k1 - k0) * dt
    r0, r = kc.initial_covariance, kc.measurement_noise
    x = np.concatenate([p[k1], (p[k1] - p[k0]) / gap])
    P = np.zeros((4, 4))
    for i in (0, 1):
        P[i, i] = r
        P[i, i + 2] = P[i + 2, i] = r / gap
        P[i + 2, i + 2] = (r + r0) / gap**2
    F, Q = _cv_matrices(dt, kc.process_noise)
    H = np.zeros((2, 4))
    H[0, 0] = H[1, 1] = 1.0
    R = r * np.eye(2)
    for k in range(k1 + 1, len(p)):
        x = F @ x
        P = F @ P @ F.T + Q
        if track.observed[k]:
            S = H @ P @ H.T + R
            K = np.linalg.solve(S, H @ P).T
            x = x + K @ (p[k] - H @ x)
            P = (np.eye(4) - K @ H) @ P
            P = 0.5 * (P + P.T)
    return x, P


def estimate_state(track: Track, kc: KalmanConfig = KalmanConfig(), dt: float = 0.1,
                   fallback_heading: float | None = None, timestamp: float = 0.0) -> AgentState:
    """Current position, speed and heading of a tracked agent.

    Acceleration and turn rate are taken as zero. When the filtered speed is
    below SLOW_SPEED and ``fallback_heading`` is given (typically the tangent
    of the lane the agent sits on) that heading is used instead.
    """
    x, _ = kalman_filter(track, dt, kc)
    speed = float(math.hypot(x[2], x[3]))
    heading = math.atan2(x[3], x[2])
    if speed < SLOW_SPEED and fallback_heading is not None:
        heading = fallback_heading
    return AgentState(x[:2].copy(), heading, speed, 0.0, track.actor_type, timestamp)


def pad_track(track: Track) -> Track:
    """Fill unobserved slots with the nearest observed position in time.

    Ties go to the earlier sample; the observed mask is kept as is.
    """
    obs = np.flatnonzero(track.observed)
    if len(obs) == len(track):
        return track
    pos = np.array(track.positions)
    for k in np.flatnonzero(~track.observed):
        gaps = np.abs(obs - k)
        pos[k] = track.positions[obs[int(np.argmin(gaps))]]  # argmin picks the earlier on ties
    return Track(track.agent_id, pos, track.observed, track.actor_type)


def drop_track(track: Track, drop_rate: float, seed) -> Track:
    """Mark each non-final sample unobserved with probability ``drop_rate``.

    Positions are left untouched; call pad_track before using them. Samples
    that were already unobserved stay unobserved.
    """
    if not 0.0 <= drop_rate < 1.0:
        raise ValueError("drop_rate must lie in [0, 1)")
    if drop_rate == 0.0:
        return track
    rng = np.random.default_rng(seed)
    keep = rng.random(len(track)) >= drop_rate
    keep[-1] = True
    return Track(track.agent_id, track.positions, track.observed & keep, track.actor_type)
