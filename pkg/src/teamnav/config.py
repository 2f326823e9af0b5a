"""Scenario configuration: a JSON-serializable schema with validation.

A config fully determines a simulation run together with a seed; the hash
of its canonical JSON form identifies it in run manifests.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from typing import Any


class ConfigError(ValueError):
    """Invalid scenario configuration; lists every offending field."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid config: " + "; ".join(self.problems))


@dataclasses.dataclass
class FusionConfig:
    max_iters: int = 10
    step_tol: float = 1e-8
    perform_ci: bool = True
    ci_weight: float = 0.99


@dataclasses.dataclass
class ToyParams:
    n_robots: int = 2
    process_std: float = 0.08
    meas_std: float = 0.5
    p0_std: float = 1.0
    meas_hz: float = 10.0


@dataclasses.dataclass
class GroundParams:
    n_robots: int = 4
    edges: list[list[int]] = dataclasses.field(
        default_factory=lambda: [[1, 2], [1, 3], [2, 3], [3, 4]]
    )
    landmark_robots: list[int] = dataclasses.field(default_factory=lambda: [1, 2])
    n_landmarks: int = 3
    area_m: float = 8.0
    odom_std: list[float] = dataclasses.field(
        default_factory=lambda: [0.05, 0.05, 0.005]
    )
    landmark_std: float = 0.3
    range_std: float = 0.1
    range_hz: float = 10.0
    p0_std: float = 0.1
    speed_mean: float = 0.4
    speed_amp: float = 0.15
    turn_amp: float = 0.35


@dataclasses.dataclass
class QuadParams:
    n_robots: int = 3
    gyro_std: float = 0.005
    accel_std: float = 0.05
    gyro_bias_rw_std: float = 1e-5
    accel_bias_rw_std: float = 1e-4
    gyro_bias_prior_std: float = 0.01
    accel_bias_prior_std: float = 0.05
    pos_robots: list[int] = dataclasses.field(default_factory=lambda: [1, 2])
    pos_std: float = 0.3
    pos_hz: float = 10.0
    height_std: float = 0.05
    height_hz: float = 30.0
    mag_robots: list[int] = dataclasses.field(default_factory=lambda: [1, 2])
    mag_std: float = 0.05
    mag_hz: float = 30.0
    range_std: float = 0.1
    range_hz: float = 90.0
    tag_offsets: list[list[float]] = dataclasses.field(
        default_factory=lambda: [[0.15, 0.0, 0.0], [-0.15, 0.0, 0.0]]
    )
    gravity: list[float] = dataclasses.field(default_factory=lambda: [0.0, 0.0, -9.81])
    world_field: list[float] = dataclasses.field(
        default_factory=lambda: [0.5, 0.0, -0.866]
    )
    p0_att_std: float = 0.05
    p0_vel_std: float = 0.05
    p0_pos_std: float = 0.1
    accel_wiggle: float = 0.6
    turn_amp: float = 0.3
    vel_damping: float = 0.4


@dataclasses.dataclass
class ScenarioConfig:
    kind: str
    name: str
    duration_s: float
    seed: int = 1
    trials: int = 1
    base_hz: int = 100
    input_hz: int = 100
    share_hz: float = 10.0
    metrics_hz: float = 10.0
    message_delay_ticks: int = 0
    psi: float = 0.0
    noise_scale: float = 1.0
    fusion: FusionConfig = dataclasses.field(default_factory=FusionConfig)
    toy: ToyParams | None = None
    ground: GroundParams | None = None
    quad: QuadParams | None = None

    def params(self):
        return {"toy": self.toy, "ground": self.ground, "quad": self.quad}[self.kind]

    def to_dict(self) -> dict:
        return _as_dict(self)

    @staticmethod
    def from_dict(data: dict) -> "ScenarioConfig":
        return _from_dict(data)

    def replace(self, **kwargs) -> "ScenarioConfig":
        return dataclasses.replace(self, **kwargs)


def _as_dict(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {
            f.name: _as_dict(getattr(obj, f.name))
            for f in dataclasses.fields(obj)
            if getattr(obj, f.name) is not None
        }
    if isinstance(obj, (list, tuple)):
        return [_as_dict(v) for v in obj]
    return obj


def _build(cls, data: dict):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError([f"unknown field {u!r} for {cls.__name__}" for u in unknown])
    return cls(**data)


def _from_dict(data: dict) -> ScenarioConfig:
    data = dict(data)
    problems = []
    for key in ("kind", "name", "duration_s"):
        if key not in data:
            problems.append(f"missing required field {key!r}")
    if problems:
        raise ConfigError(problems)
    if "fusion" in data:
        data["fusion"] = _build(FusionConfig, data["fusion"])
    for key, cls in (("toy", ToyParams), ("ground", GroundParams), ("quad", QuadParams)):
        if data.get(key) is not None:
            data[key] = _build(cls, data[key])
    return _build(ScenarioConfig, data)


def load_config(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        config = ScenarioConfig.from_dict(json.load(fh))
    validate(config)
    return config


def save_config(config: ScenarioConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_hash(config: ScenarioConfig) -> str:
    canon = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _check_rate(problems, base_hz, rate, field):
    if rate <= 0:
        problems.append(f"{field} must be positive (got {rate})")
    elif abs(base_hz / rate - round(base_hz / rate)) > 1e-9:
        problems.append(f"{field}={rate} does not divide base_hz={base_hz}")


def validate(config: ScenarioConfig) -> None:
    problems: list[str] = []
    if config.kind not in ("toy", "ground", "quad"):
        problems.append(f"kind must be toy/ground/quad (got {config.kind!r})")
    if config.duration_s <= 0:
        problems.append("duration_s must be positive")
    if config.trials < 1:
        problems.append("trials must be >= 1")
    if config.base_hz < 1:
        problems.append("base_hz must be >= 1")
    if config.message_delay_ticks < 0:
        problems.append("message_delay_ticks must be >= 0")
    if not 0.0 < config.fusion.ci_weight < 1.0:
        problems.append("fusion.ci_weight must be in (0, 1)")
    if config.fusion.max_iters < 1:
        problems.append("fusion.max_iters must be >= 1")
    if config.psi < 0:
        problems.append("psi must be >= 0")
    if config.noise_scale < 0:
        problems.append("noise_scale must be >= 0")
    _check_rate(problems, config.base_hz, config.input_hz, "input_hz")
    _check_rate(problems, config.base_hz, config.share_hz, "share_hz")
    _check_rate(problems, config.base_hz, config.metrics_hz, "metrics_hz")
    if config.kind in ("toy", "ground", "quad"):
        params = config.params()
        if params is None:
            problems.append(f"missing {config.kind!r} parameter block")
        else:
            problems.extend(_validate_params(config, params))
    if problems:
        raise ConfigError(problems)


def _validate_params(config: ScenarioConfig, params) -> list[str]:
    problems: list[str] = []
    if isinstance(params, ToyParams):
        if params.n_robots < 2:
            problems.append("toy.n_robots must be >= 2")
        _check_rate(problems, config.base_hz, params.meas_hz, "toy.meas_hz")
    elif isinstance(params, GroundParams):
        ids = set(range(1, params.n_robots + 1))
        for e in params.edges:
            if len(e) != 2 or e[0] == e[1] or not set(e) <= ids:
                problems.append(f"ground.edges entry {e} is not a valid robot pair")
        if not set(params.landmark_robots) <= ids:
            problems.append("ground.landmark_robots outside robot id range")
        if params.n_landmarks < 1:
            problems.append("ground.n_landmarks must be >= 1")
        if len(params.odom_std) != 3:
            problems.append("ground.odom_std needs 3 entries")
        _check_rate(problems, config.base_hz, params.range_hz, "ground.range_hz")
    elif isinstance(params, QuadParams):
        ids = set(range(1, params.n_robots + 1))
        if params.n_robots < 2:
            problems.append("quad.n_robots must be >= 2")
        if not set(params.pos_robots) <= ids:
            problems.append("quad.pos_robots outside robot id range")
        if not set(params.mag_robots) <= ids:
            problems.append("quad.mag_robots outside robot id range")
        for rate, name in (
            (params.pos_hz, "quad.pos_hz"),
            (params.height_hz, "quad.height_hz"),
            (params.mag_hz, "quad.mag_hz"),
            (params.range_hz, "quad.range_hz"),
        ):
            _check_rate(problems, config.base_hz, rate, name)
        if len(params.tag_offsets) < 1:
            problems.append("quad.tag_offsets needs at least one tag")
    return problems
