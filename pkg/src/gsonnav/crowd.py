"""Scripted pedestrians performing queue, conversation, photography and walking activities.

Each group follows a formation defined by its script; a bounded repulsion from
the robot and from people outside the group is layered on top. Members of one
group do not repel each other, so formations stay geometrically coherent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .world import Activity, PedestrianState, SocialGroup, wrap_angle


@dataclass(frozen=True)
class CrowdConfig:
    max_speed: float = 1.5
    repulsion_cutoff: float = 1.0
    repulsion_gain: float = 0.5
    anchor_gain: float = 2.0
    anchor_speed: float = 0.5
    walk_noise: float = 0.0


@dataclass(frozen=True)
class ActivityScript:
    """Formation parameters for one group.

    queue: ``anchor`` is the head pose (facing the service point), members line
    up behind it at ``spacing``; every ``advance_period`` seconds (0 = never) the
    head leaves and the rest move up one slot over the following period.
    conversation: members on a circle of ``radius`` around ``center`` at
    ``angles`` (degrees), facing inward.
    photography: ``photographer`` pose looking at a line of subjects placed
    ``gap`` metres ahead, ``spacing`` apart, facing back.
    walking: the group centre follows ``waypoints`` at ``speed`` with members at
    ``offsets`` metres to the left of the walking direction.
    """

    activity: Activity
    anchor: tuple[float, float, float] = (0.0, 0.0, 0.0)
    spacing: float = 1.0
    advance_period: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0
    angles: tuple[float, ...] = ()
    photographer: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gap: float = 3.0
    waypoints: tuple[tuple[float, float], ...] = ()
    speed: float = 1.0
    offsets: tuple[float, ...] = ()


@dataclass(frozen=True)
class GroupSpec:
    group_id: int
    member_ids: tuple[int, ...]
    script: ActivityScript


def _unit(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta)])


def formation(spec: GroupSpec) -> dict[int, tuple[np.ndarray, float]]:
    """Initial (position, heading) of every member."""
    s = spec.script
    out: dict[int, tuple[np.ndarray, float]] = {}
    ids = spec.member_ids
    if s.activity == Activity.QUEUE:
        head = np.array(s.anchor[:2])
        facing = s.anchor[2]
        for k, pid in enumerate(ids):
            out[pid] = (head - k * s.spacing * _unit(facing), facing)
    elif s.activity == Activity.CONVERSATION:
        c = np.array(s.center)
        angles = s.angles or tuple(360.0 * k / len(ids) for k in range(len(ids)))
        for pid, ang in zip(ids, angles):
            phi = math.radians(ang)
            out[pid] = (c + s.radius * _unit(phi), wrap_angle(phi + math.pi))
    elif s.activity == Activity.PHOTOGRAPHY:
        px, py, pth = s.photographer
        out[ids[0]] = (np.array([px, py]), pth)
        subjects = ids[1:]
        line_center = np.array([px, py]) + s.gap * _unit(pth)
        lateral = _unit(pth + math.pi / 2.0)
        for k, pid in enumerate(subjects):
            off = (k - (len(subjects) - 1) / 2.0) * s.spacing
            out[pid] = (line_center + off * lateral, wrap_angle(pth + math.pi))
    elif s.activity == Activity.WALKING:
        if len(s.waypoints) < 1:
            raise ValueError("walking script needs waypoints")
        start = np.array(s.waypoints[0])
        heading = _path_heading(s.waypoints, 0)
        offsets = s.offsets or (0.0,) * len(ids)
        for pid, off in zip(ids, offsets):
            out[pid] = (start + off * _unit(heading + math.pi / 2.0), heading)
    else:
        raise ValueError(f"unknown activity {s.activity}")
    return out


def _path_heading(waypoints, seg: int) -> float:
    if len(waypoints) < 2:
        return 0.0
    seg = min(seg, len(waypoints) - 2)
    a, b = waypoints[seg], waypoints[seg + 1]
    return math.atan2(b[1] - a[1], b[0] - a[0])


def _walk_position(waypoints, distance: float) -> tuple[np.ndarray, float]:
    """Point and heading at arc length ``distance`` along the waypoint polyline."""
    pts = [np.array(w, dtype=float) for w in waypoints]
    if len(pts) == 1:
        return pts[0], 0.0
    remaining = distance
    for k in range(len(pts) - 1):
        seg = pts[k + 1] - pts[k]
        length = float(np.hypot(*seg))
        if remaining <= length or k == len(pts) - 2:
            t = min(remaining, length) / length if length > 0 else 0.0
            return pts[k] + t * seg, math.atan2(seg[1], seg[0])
        remaining -= length
    raise AssertionError("unreachable")


def check_separation(positions: list[np.ndarray], minimum: float = 0.4) -> None:
    for a in range(len(positions)):
        for b in range(a + 1, len(positions)):
            if np.hypot(*(positions[a] - positions[b])) < minimum:
                raise ValueError(f"pedestrians start closer than {minimum} m")


@dataclass
class _GroupRuntime:
    spec: GroupSpec
    members: list[int]
    slots: dict[int, np.ndarray] = field(default_factory=dict)
    headings: dict[int, float] = field(default_factory=dict)
    departures: int = 0


class CrowdSimulator:
    """Owns pedestrian state; ``step`` advances everyone by ``dt``."""

    def __init__(
        self,
        pedestrians: list[PedestrianState],
        groups: list[GroupSpec],
        config: CrowdConfig | None = None,
        rng: np.random.Generator | None = None,
    ):
        self.config = config or CrowdConfig()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.peds: dict[int, PedestrianState] = {p.id: p.copy() for p in pedestrians}
        self.time = 0.0
        self.groups: list[_GroupRuntime] = []
        self._group_of: dict[int, int] = {}
        for spec in groups:
            rt = _GroupRuntime(spec, list(spec.member_ids))
            for pid, (pos, heading) in formation(spec).items():
                rt.slots[pid] = pos
                rt.headings[pid] = heading
                self._group_of[pid] = spec.group_id
            self.groups.append(rt)
        check_separation([p.position for p in self.peds.values()])

    def snapshot(self) -> list[PedestrianState]:
        return [self.peds[k].copy() for k in sorted(self.peds)]

    def ground_truth_groups(self) -> list[SocialGroup]:
        return [
            SocialGroup(g.spec.group_id, frozenset(g.members), g.spec.script.activity)
            for g in self.groups
            if g.members
        ]

    def _targets(self, g: _GroupRuntime, t_next: float, dt: float) -> dict[int, tuple[np.ndarray, np.ndarray, float]]:
        """Scripted (target position, feed-forward velocity, heading) per member at ``t_next``."""
        s = g.spec.script
        out = {}
        if s.activity == Activity.WALKING:
            center, heading = _walk_position(s.waypoints, s.speed * t_next)
            prev, _ = _walk_position(s.waypoints, s.speed * (t_next - dt))
            vel = (center - prev) / dt
            offsets = s.offsets or (0.0,) * len(g.spec.member_ids)
            for pid, off in zip(g.spec.member_ids, offsets):
                if pid in self.peds:
                    out[pid] = (center + off * _unit(heading + math.pi / 2.0), vel, heading)
            return out
        if s.activity == Activity.QUEUE and s.advance_period > 0:
            due = int(math.floor(self.time / s.advance_period + 1e-9))
            while g.departures < due and g.members:
                head = g.members.pop(0)
                self.peds.pop(head, None)
                g.departures += 1
            facing = s.anchor[2]
            step_speed = s.spacing / s.advance_period
            head = np.array(s.anchor[:2])
            for k, pid in enumerate(g.members):
                slot = head - k * s.spacing * _unit(facing)
                out[pid] = (slot, step_speed * _unit(facing), facing)
            return out
        for pid in g.members:
            out[pid] = (g.slots[pid], np.zeros(2), g.headings[pid])
        return out

    def step(self, dt: float, robot_xy=None) -> list[PedestrianState]:
        if dt <= 0:
            raise ValueError("dt must be positive")
        cfg = self.config
        t_next = self.time + dt
        desired: dict[int, np.ndarray] = {}
        headings: dict[int, float] = {}
        for g in self.groups:
            s = g.spec.script
            for pid, (target, ff, heading) in self._targets(g, t_next, dt).items():
                ped = self.peds[pid]
                err = target - ped.position
                dist = float(np.hypot(*err))
                if s.activity == Activity.WALKING:
                    v = err / dt
                elif s.activity == Activity.QUEUE and s.advance_period > 0:
                    speed = min(float(np.hypot(*ff)), dist / dt)
                    v = err / dist * speed if dist > 0 else np.zeros(2)
                else:
                    v = cfg.anchor_gain * err
                    n = float(np.hypot(*v))
                    if n > cfg.anchor_speed:
                        v *= cfg.anchor_speed / n
                desired[pid] = v
                headings[pid] = heading
        for pid in self.peds:
            desired.setdefault(pid, np.zeros(2))
            headings.setdefault(pid, self.peds[pid].heading)

        ids = sorted(self.peds)
        new_states = {}
        for pid in ids:
            ped = self.peds[pid]
            v = desired[pid] + self._repulsion(pid, ped.position, robot_xy)
            if cfg.walk_noise > 0:
                v = v + self.rng.normal(0.0, cfg.walk_noise, size=2)
            speed = float(np.hypot(*v))
            if speed > cfg.max_speed:
                v = v * (cfg.max_speed / speed)
            heading = headings[pid]
            if speed > 0.2 and self._activity(pid) == Activity.WALKING:
                heading = math.atan2(v[1], v[0])
            new_states[pid] = PedestrianState(pid, ped.position + v * dt, v, heading)
        self.peds = new_states
        self.time = t_next
        return self.snapshot()

    def _activity(self, pid: int) -> Activity | None:
        gid = self._group_of.get(pid)
        for g in self.groups:
            if g.spec.group_id == gid:
                return g.spec.script.activity
        return None

    def _repulsion(self, pid: int, pos: np.ndarray, robot_xy) -> np.ndarray:
        cfg = self.config
        force = np.zeros(2)
        sources = []
        if robot_xy is not None:
            sources.append(np.asarray(robot_xy, dtype=float))
        gid = self._group_of.get(pid)
        for other_id, other in self.peds.items():
            if other_id == pid:
                continue
            if gid is not None and self._group_of.get(other_id) == gid:
                continue
            sources.append(other.position)
        for src in sources:
            d = pos - src
            dist = float(np.hypot(*d))
            if 1e-9 < dist < cfg.repulsion_cutoff:
                force += cfg.repulsion_gain * (1.0 - dist / cfg.repulsion_cutoff) * d / dist
        return force


def ground_truth_groups(groups: list[GroupSpec]) -> list[SocialGroup]:
    return [SocialGroup(g.group_id, frozenset(g.member_ids), g.script.activity) for g in groups]
