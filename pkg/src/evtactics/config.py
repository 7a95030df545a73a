"""Run configuration: a nested YAML mapping validated section by section.

Every key is optional; missing keys take the defaults of the matching
dataclass.  Unknown keys and constraint violations raise :class:`ConfigError`
naming the offending ``section.key``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from evtactics.agent.dqn import TrainingConfig
from evtactics.avoidance import AvoidanceConfig
from evtactics.perception import PerceptionConfig
from evtactics.rewards import RewardConfig
from evtactics.world import CV_PARAMS, EV_PARAMS, FlowConfig, RoadConfig, VehicleParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    warmup_s: float = 60.0
    step_cap_factor: float = 10.0
    eval_episodes: int = 200
    flows: tuple[float, ...] = (0.5, 1.0)
    train_flows: tuple[float, ...] = (0.5, 1.0)
    workers: int = 1
    rolling_window: int = 100

    def __post_init__(self):
        if self.warmup_s < 0:
            raise ValueError(f"warmup_s must be >= 0, got {self.warmup_s}")
        if not self.step_cap_factor >= 1:
            raise ValueError(f"step_cap_factor must be >= 1, got {self.step_cap_factor}")
        for name in ("eval_episodes", "workers", "rolling_window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("flows", "train_flows"):
            values = tuple(float(x) for x in getattr(self, name))
            if not values or any(x < 0 for x in values):
                raise ValueError(f"{name} must be a non-empty list of rates >= 0, got {list(values)}")
            object.__setattr__(self, name, values)


# Reward fields tied to the road and the EV; they are not configurable directly.
_DERIVED_REWARD_KEYS = ("d_total", "v_max", "cooperative_enabled")


@dataclass(frozen=True)
class RunConfig:
    road: RoadConfig = field(default_factory=RoadConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    ev: VehicleParams = EV_PARAMS
    cv: VehicleParams = CV_PARAMS
    avoidance: AvoidanceConfig = field(default_factory=AvoidanceConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    seed: int = 0
    output_dir: str | None = None

    def reward_for(self, cooperative: bool) -> RewardConfig:
        return dataclasses.replace(self.reward, d_total=self.road.length_m, v_max=self.ev.max_speed,
                                   cooperative_enabled=cooperative)


def _build(cls, section: str, values: Any, base=None, exclude=()):
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(values).__name__}")
    names = {f.name for f in dataclasses.fields(cls)} - set(exclude)
    for key in values:
        if key not in names:
            raise ConfigError(f"{section}.{key}: unknown key (allowed: {', '.join(sorted(names))})")
    try:
        if base is not None:
            return dataclasses.replace(base, **values)
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


_SECTIONS = ("road", "flow", "vehicles", "avoidance", "perception", "reward", "training", "experiment",
             "seed", "output_dir")


def from_mapping(data: dict | None) -> RunConfig:
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError(f"top level: expected a mapping, got {type(data).__name__}")
    for key in data:
        if key not in _SECTIONS:
            raise ConfigError(f"{key}: unknown section (allowed: {', '.join(_SECTIONS)})")
    vehicles = data.get("vehicles") or {}
    if not isinstance(vehicles, dict):
        raise ConfigError("vehicles: expected a mapping")
    for key in vehicles:
        if key not in ("ev", "cv"):
            raise ConfigError(f"vehicles.{key}: unknown key (allowed: cv, ev)")
    ev = _build(VehicleParams, "vehicles.ev", vehicles.get("ev"), base=EV_PARAMS, exclude=("kind",))
    cv = _build(VehicleParams, "vehicles.cv", vehicles.get("cv"), base=CV_PARAMS, exclude=("kind",))
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed: must be a non-negative integer, got {seed!r}")
    output_dir = data.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("output_dir: must be a string path")
    cfg = RunConfig(
        road=_build(RoadConfig, "road", data.get("road")),
        flow=_build(FlowConfig, "flow", data.get("flow")),
        ev=ev,
        cv=cv,
        avoidance=_build(AvoidanceConfig, "avoidance", data.get("avoidance")),
        perception=_build(PerceptionConfig, "perception", data.get("perception")),
        reward=_build(RewardConfig, "reward", data.get("reward"), exclude=_DERIVED_REWARD_KEYS),
        training=_build(TrainingConfig, "training", data.get("training")),
        experiment=_build(ExperimentConfig, "experiment", data.get("experiment")),
        seed=seed,
        output_dir=output_dir,
    )
    try:
        cfg.reward_for(False)
    except ValueError as exc:
        raise ConfigError(f"reward: {exc} (v_max is vehicles.ev.max_speed)") from None
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}:{where} malformed YAML: {getattr(exc, 'problem', exc)}") from None
    try:
        return from_mapping(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
