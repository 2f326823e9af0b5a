"""Canonical scenario configurations and the config-to-definition registry."""

from __future__ import annotations

from ..config import FusionConfig, GroundParams, QuadParams, ScenarioConfig, ToyParams, validate
from .ground import GroundScenario
from .quad import QuadScenario
from .toy import ToyScenario


def scenario_toy(n_robots: int = 2) -> ScenarioConfig:
    """Linear full-overlap problem; subtraction residuals over a chain."""
    if n_robots < 2:
        raise ValueError("toy scenario needs at least two robots")
    config = ScenarioConfig(
        kind="toy",
        name=f"toy{n_robots}" if n_robots != 2 else "toy",
        duration_s=30.0,
        seed=7,
        trials=1,
        base_hz=10,
        input_hz=10,
        share_hz=2.0,
        metrics_hz=10.0,
        psi=10.0,
        fusion=FusionConfig(max_iters=1),
        toy=ToyParams(n_robots=n_robots),
    )
    validate(config)
    return config


def scenario_ground() -> ScenarioConfig:
    """Four planar robots with odometry sharing; two see landmarks."""
    config = ScenarioConfig(
        kind="ground",
        name="ground",
        duration_s=60.0,
        seed=11,
        trials=1,
        base_hz=100,
        input_hz=100,
        share_hz=10.0,
        metrics_hz=10.0,
        psi=0.0,
        fusion=FusionConfig(max_iters=5),
        ground=GroundParams(),
    )
    validate(config)
    return config


def scenario_quad() -> ScenarioConfig:
    """Three aerial robots with IMU increment sharing and bias estimation;
    the third robot has no absolute position or heading sensing."""
    config = ScenarioConfig(
        kind="quad",
        name="quad",
        duration_s=60.0,
        seed=23,
        trials=1,
        base_hz=1800,
        input_hz=200,
        share_hz=10.0,
        metrics_hz=10.0,
        psi=0.0,
        fusion=FusionConfig(max_iters=3),
        quad=QuadParams(),
    )
    validate(config)
    return config


BUILTIN = {
    "toy": scenario_toy,
    "toy4": lambda: scenario_toy(4),
    "ground": scenario_ground,
    "quad": scenario_quad,
}


def build_definition(config: ScenarioConfig):
    validate(config)
    if config.kind == "toy":
        return ToyScenario(config)
    if config.kind == "ground":
        return GroundScenario(config)
    if config.kind == "quad":
        return QuadScenario(config)
    raise ValueError(f"unknown scenario kind {config.kind!r}")
