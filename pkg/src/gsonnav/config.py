"""Scenario configuration and strict JSON loading.

A scenario file is one JSON object whose keys mirror ``ScenarioConfig``
field-for-field; unknown keys anywhere in the document are rejected.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .crowd import ActivityScript, CrowdConfig, GroupSpec
from .estimation import MockErrorModel
from .midlevel import MidLevelConfig
from .nmpc import NMPCParams
from .perception import SensorConfig, TrackerConfig
from .world import Activity, Pose2D


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PedestrianSpec:
    id: int
    position: tuple[float, float]
    heading: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    archetype: str
    map: str
    start: tuple[float, float, float]
    goal: tuple[float, float, float]
    pedestrians: tuple[PedestrianSpec, ...] = ()
    groups: tuple[GroupSpec, ...] = ()
    seed: int = 0
    dt: float = 0.1
    time_limit: float = 40.0
    robot_radius: float = 0.3
    inflation_radius: float = 0.5
    keyframe_window: float = 3.0
    sensor: SensorConfig = field(default_factory=SensorConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    crowd: CrowdConfig = field(default_factory=CrowdConfig)
    midlevel: MidLevelConfig = field(default_factory=MidLevelConfig)
    nmpc: NMPCParams = field(default_factory=NMPCParams)
    mock: MockErrorModel = field(default_factory=MockErrorModel)

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.time_limit <= 0:
            raise ConfigError("time_limit must be positive")
        ids = [p.id for p in self.pedestrians]
        if len(set(ids)) != len(ids):
            raise ConfigError("pedestrian ids must be unique")
        seen: set[int] = set()
        for g in self.groups:
            members = set(g.member_ids)
            if not members <= set(ids):
                raise ConfigError(f"group {g.group_id} references unknown pedestrians")
            if members & seen:
                raise ConfigError(f"group {g.group_id} shares members with another group")
            seen |= members

    @property
    def start_pose(self) -> Pose2D:
        return Pose2D(*self.start)

    @property
    def goal_pose(self) -> Pose2D:
        return Pose2D(*self.goal)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return dataclasses.replace(self, seed=seed)


def _build(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _build(inner[0], value, where)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        hints = typing.get_type_hints(tp)
        names = {f.name for f in dataclasses.fields(tp) if f.init}
        unknown = sorted(set(value) - names)
        if unknown:
            raise ConfigError(f"{where}: unknown keys {unknown}")
        kwargs = {k: _build(hints[k], v, f"{where}.{k}") for k, v in value.items()}
        try:
            return tp(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    if origin is tuple:
        if not isinstance(value, list | tuple):
            raise ConfigError(f"{where}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_build(args[0], v, f"{where}[{i}]") for i, v in enumerate(value))
        if args:
            if len(args) != len(value):
                raise ConfigError(f"{where}: expected {len(args)} entries")
            return tuple(_build(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
        return tuple(value)
    if tp is typing.Any:
        return value
    if isinstance(tp, type) and issubclass(tp, Enum):
        try:
            return tp(value)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, int | float):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean")
        return value
    raise ConfigError(f"{where}: unsupported type {tp}")


def from_dict(cls, data: dict, where: str = "config"):
    """Build dataclass ``cls`` from plain JSON data, rejecting unknown keys."""
    return _build(cls, data, where)


def to_dict(obj):
    """Plain-JSON form of a config dataclass (inverse of ``from_dict``)."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.init}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, list | tuple):
        return [to_dict(v) for v in obj]
    return obj


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    config = from_dict(ScenarioConfig, data, path.name)
    if not config.map.startswith("pkg:") and not Path(config.map).is_absolute():
        # map paths in scenario files are relative to the scenario file
        config = dataclasses.replace(config, map=str((path.parent / config.map).resolve()))
    return config


def save_scenario(config: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(config), indent=2) + "\n")


__all__ = [
    "Activity",
    "ActivityScript",
    "ConfigError",
    "GroupSpec",
    "PedestrianSpec",
    "ScenarioConfig",
    "from_dict",
    "load_scenario",
    "save_scenario",
    "to_dict",
]
