"""Seeded generators for the four group archetypes plus an empty corridor.

All archetypes share one hall map: the robot crosses it left to right along
its centre line and meets one group placed across that line. The seed jitters
the group's position, spacing and orientation.
"""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path

import numpy as np

from .config import PedestrianSpec, ScenarioConfig
from .crowd import ActivityScript, GroupSpec, formation
from .world import FREE, LETHAL, Activity, CostMap, load_map

ARCHETYPES = ("queue", "conversation", "photography", "walking")
PACKAGE_PREFIX = "pkg:"

HALL_SIZE = (12.0, 8.0)
HALL_RESOLUTION = 0.1
START = (1.5, 4.0, 0.0)
GOAL = (10.5, 4.0, 0.0)


def hall_map(width: float = HALL_SIZE[0], height: float = HALL_SIZE[1], resolution: float = HALL_RESOLUTION) -> CostMap:
    """Empty rectangular hall with one-cell walls."""
    nx, ny = int(round(width / resolution)), int(round(height / resolution))
    cost = np.full((ny, nx), FREE, dtype=np.uint8)
    cost[0, :] = cost[-1, :] = LETHAL
    cost[:, 0] = cost[:, -1] = LETHAL
    return CostMap(cost, resolution)


def resolve_map(ref: str, base_dir: str | Path | None = None) -> CostMap:
    """Load a map by reference: ``pkg:<name>`` for bundled maps, otherwise a path
    (relative paths resolve against ``base_dir``)."""
    if ref.startswith(PACKAGE_PREFIX):
        name = ref[len(PACKAGE_PREFIX) :]
        with resources.as_file(resources.files("gsonnav") / "data" / "maps" / f"{name}.png") as p:
            return load_map(p)
    path = Path(ref)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    return load_map(path)


def _queue(rng) -> GroupSpec:
    spacing = rng.uniform(1.6, 2.0)
    x = 6.0 + rng.uniform(-0.5, 0.5)
    head_y = START[1] + spacing / 2.0 + rng.uniform(-0.3, 0.3)
    tilt = rng.uniform(-0.15, 0.15)
    script = ActivityScript(Activity.QUEUE, anchor=(x, head_y, math.pi / 2.0 + tilt), spacing=spacing)
    return GroupSpec(1, (1, 2, 3), script)


def _conversation(rng) -> GroupSpec:
    rot = rng.uniform(-20.0, 20.0)
    center = (6.0 + rng.uniform(-0.5, 0.5), START[1] + rng.uniform(-0.3, 0.3))
    script = ActivityScript(
        Activity.CONVERSATION,
        center=center,
        radius=rng.uniform(1.0, 1.3),
        angles=tuple(a + rot for a in (45.0, 135.0, 225.0, 315.0)),
    )
    return GroupSpec(1, (1, 2, 3, 4), script)


def _photography(rng) -> GroupSpec:
    x = 6.0 + rng.uniform(-0.5, 0.5)
    y = START[1] - 1.5 + rng.uniform(-0.3, 0.3)
    script = ActivityScript(
        Activity.PHOTOGRAPHY,
        photographer=(x, y, math.pi / 2.0 + rng.uniform(-0.15, 0.15)),
        gap=rng.uniform(2.8, 3.2),
        spacing=rng.uniform(0.7, 0.9),
    )
    return GroupSpec(1, (1, 2, 3), script)


def _walking(rng) -> GroupSpec:
    y = START[1] + rng.uniform(-0.3, 0.3)
    half = rng.uniform(0.8, 1.0)
    script = ActivityScript(
        Activity.WALKING,
        waypoints=((9.5 + rng.uniform(-0.5, 0.5), y), (1.0, y)),
        speed=rng.uniform(0.3, 0.5),
        offsets=(-half, half),
    )
    return GroupSpec(1, (1, 2), script)


_BUILDERS = {
    "queue": _queue,
    "conversation": _conversation,
    "photography": _photography,
    "walking": _walking,
}


def build_scenario(archetype: str, seed: int, map_ref: str = "pkg:hall", **overrides) -> ScenarioConfig:
    """Scenario of the given archetype; ``seed`` drives both the layout jitter and the episode."""
    if archetype == "empty":
        groups: list[GroupSpec] = []
    elif archetype in _BUILDERS:
        rng = np.random.default_rng([seed, ARCHETYPES.index(archetype)])
        groups = [_BUILDERS[archetype](rng)]
    else:
        raise ValueError(f"unknown archetype {archetype!r}")
    peds = []
    for g in groups:
        for pid, (pos, heading) in sorted(formation(g).items()):
            peds.append(PedestrianSpec(pid, (float(pos[0]), float(pos[1])), float(heading)))
    return ScenarioConfig(
        name=f"{archetype}-{seed}",
        archetype=archetype,
        map=map_ref,
        start=START,
        goal=GOAL,
        pedestrians=tuple(peds),
        groups=tuple(groups),
        seed=seed,
        **overrides,
    )
