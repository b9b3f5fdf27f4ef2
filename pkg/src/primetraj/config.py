"""Run configuration: horizons, sampling constants and kinematic limits."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from typing import Any, Mapping

from .errors import ConfigError


@dataclass(frozen=True)
class Config:
    # horizons and rates
    observed_horizon: float = 2.0  # T_P, s
    prediction_horizon: float = 3.0  # T_F, s
    frame_rate: float = 10.0  # Hz
    num_modes: int = 6  # K
    # path search
    forward_dist: float = 140.0  # m
    backward_dist: float = 20.0  # m
    # longitudinal / lateral sampling
    decel_limit: float = 6.0  # m/s^2
    accel_limit: float = 6.0  # m/s^2
    max_sample_speed: float = 30.0  # m/s
    lane_width: float = 5.0  # m
    n_lon_samples: int = 35
    n_lat_samples: int = 9
    # kinematic limits
    v_max: float = 33.33  # m/s
    a_max: float = 8.0  # m/s^2
    kappa_max: float = 0.33  # 1/m
    # evaluator / selection
    label_temperature: float = 1.0
    traj_time_step: float = 0.1  # s
    path_point_spacing: float = 2.0  # m
    nms_threshold: float = 2.0  # m
    miss_threshold: float = 2.0  # m

    @property
    def n_obs_steps(self) -> int:
        return int(round(self.observed_horizon * self.frame_rate))

    @property
    def n_future_steps(self) -> int:
        """Number of trajectory steps over the prediction horizon."""
        return int(round(self.prediction_horizon / self.traj_time_step))

    @property
    def n_gt_steps(self) -> int:
        return int(round(self.prediction_horizon * self.frame_rate))

    @property
    def localization_radius(self) -> float:
        return self.lane_width

    def replace(self, **changes: Any) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> "Config":
        """Build a config from (partial) overrides; unknown keys are rejected."""
        if data is None:
            return validate_config(cls())
        if not isinstance(data, Mapping):
            raise ConfigError(["config must be an object"])
        known = {f.name: f for f in fields(cls)}
        problems = [f"unknown config key {k!r}" for k in data if k not in known]
        values: dict[str, Any] = {}
        for key, raw in data.items():
            if key not in known:
                continue
            want_int = known[key].type == "int"
            if isinstance(raw, bool) or not isinstance(raw, (int, float)):
                problems.append(f"{key} must be a number")
                continue
            if want_int:
                if float(raw) != int(raw):
                    problems.append(f"{key} must be an integer")
                    continue
                values[key] = int(raw)
            else:
                values[key] = float(raw)
        if problems:
            raise ConfigError(problems)
        return validate_config(cls(**values))


def _near_int(x: float) -> bool:
    return math.isfinite(x) and abs(x - round(x)) < 1e-9


def validate_config(c: Config) -> Config:
    """Return ``c`` unchanged if every invariant holds, else raise ConfigError
    listing all violations."""
    problems = []
    positive = [
        "observed_horizon", "prediction_horizon", "frame_rate", "num_modes",
        "forward_dist", "backward_dist", "max_sample_speed", "lane_width",
        "n_lon_samples", "n_lat_samples", "v_max", "a_max", "kappa_max",
        "label_temperature", "traj_time_step", "path_point_spacing",
        "nms_threshold", "miss_threshold",
    ]
    for name in positive:
        value = getattr(c, name)
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            problems.append(f"{name} must be strictly positive (got {value!r})")
    for name in ("decel_limit", "accel_limit"):
        value = getattr(c, name)
        if not (math.isfinite(value) and value >= 0):
            problems.append(f"{name} must be >= 0 (got {value!r})")
    if isinstance(c.n_lon_samples, int) and c.n_lon_samples < 2:
        problems.append("n_lon_samples must be >= 2")
    if isinstance(c.n_lat_samples, int) and c.n_lat_samples >= 1 and c.n_lat_samples % 2 == 0:
        problems.append("n_lat_samples must be odd so that offset 0 is sampled")
    for name in ("num_modes", "n_lon_samples", "n_lat_samples"):
        if not isinstance(getattr(c, name), int):
            problems.append(f"{name} must be an integer")
    if not problems:
        if not _near_int(c.observed_horizon * c.frame_rate):
            problems.append("observed_horizon * frame_rate must be a whole number of samples")
        if not _near_int(c.prediction_horizon / c.traj_time_step):
            problems.append("prediction_horizon / traj_time_step must be a whole number of steps")
    if problems:
        raise ConfigError(problems)
    return c
