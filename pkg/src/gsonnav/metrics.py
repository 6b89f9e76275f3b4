"""Social-disturbance and path-quality metrics over a finished episode.

Everything here is computed from ground truth: the robot trajectory, the true
pedestrian states and the scripted group memberships at every tick.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path as FsPath

import numpy as np

from .geometry import boundary_distance, convex_hull, points_in_polygon, segment_distance
from .world import wrap_angle

DISTURB_RADIUS = 1.2
GOAL_TOLERANCE = 0.3


@dataclass
class EpisodeRecord:
    """Ground truth on a shared time base.

    ``robot`` is (T, 3) rows of x, y, theta. ``ped_positions[t]`` is (P_t, 2)
    and ``ped_headings[t]`` is (P_t,). ``group_points[t]`` holds one (n, 2)
    array of member positions per ground-truth group present at tick t.
    """

    dt: float
    robot: np.ndarray
    ped_positions: list[np.ndarray] = field(default_factory=list)
    ped_headings: list[np.ndarray] = field(default_factory=list)
    group_points: list[list[np.ndarray]] = field(default_factory=list)
    reference: np.ndarray | None = None
    goal: tuple[float, float] | None = None
    robot_radius: float = 0.3

    def __post_init__(self):
        self.robot = np.asarray(self.robot, dtype=float).reshape(-1, 3)
        T = len(self.robot)
        for name in ("ped_positions", "ped_headings", "group_points"):
            series = getattr(self, name)
            if series and len(series) != T:
                raise ValueError(f"{name} has {len(series)} ticks, trajectory has {T}")

    @property
    def ticks(self) -> int:
        return len(self.robot)


@dataclass
class MetricReport:
    time_disturbing_individual: float
    time_disturbing_group: float
    comfort_distance: float
    success: bool
    time_to_goal: float
    path_length: float
    roughness: float
    curvature: float
    jerk: float
    angular_deviation: float
    velocity: float

    def row(self) -> dict:
        return asdict(self)


REPORT_FIELDS = [f.name for f in fields(MetricReport)]


def _frontal(robot_xy, robot_yaw, peds, headings, literal_yaw: bool) -> np.ndarray:
    rel = robot_xy[None, :] - peds
    dist = np.hypot(rel[:, 0], rel[:, 1])
    if literal_yaw:
        bearing = np.arctan2(rel[:, 1], rel[:, 0])
        diff = np.abs(np.vectorize(wrap_angle)(robot_yaw - bearing)) if len(bearing) else bearing
        ahead = diff < math.pi / 2.0
    else:
        ahead = np.cos(headings) * rel[:, 0] + np.sin(headings) * rel[:, 1] > 0.0
    return (dist < DISTURB_RADIUS) & ahead


def time_disturbing_individual(record: EpisodeRecord, literal_yaw: bool = False) -> float:
    """Time with the robot closer than 1.2 m to someone and inside their frontal half-plane.

    ``literal_yaw`` switches the frontal test to comparing the robot's yaw with
    the bearing of the person-to-robot vector.
    """
    total = 0
    for t in range(record.ticks):
        peds = np.asarray(record.ped_positions[t], dtype=float).reshape(-1, 2) if record.ped_positions else np.zeros((0, 2))
        if len(peds) == 0:
            continue
        heads = np.asarray(record.ped_headings[t], dtype=float).reshape(-1)
        if _frontal(record.robot[t, :2], record.robot[t, 2], peds, heads, literal_yaw).any():
            total += 1
    return total * record.dt


def hull_width(vertices: np.ndarray) -> float:
    """Minimum width of a convex polygon (smallest edge-to-farthest-vertex distance)."""
    best = math.inf
    n = len(vertices)
    for k in range(n):
        a, b = vertices[k], vertices[(k + 1) % n]
        e = b - a
        length = float(np.hypot(*e))
        if length == 0.0:
            continue
        rel = vertices - a
        best = min(best, float(np.abs(e[0] * rel[:, 1] - e[1] * rel[:, 0]).max()) / length)
    return best


def group_signed_distance(p, members: np.ndarray, robot_radius: float) -> float | None:
    """Signed distance to a group's hull: positive outside, minus the depth inside.

    Two-person groups and hulls thinner than the robot's diameter (a queue
    standing in a line) are inflated by the robot radius, so cutting between
    members counts as entering the group. Single people give ``None``.
    """
    members = np.asarray(members, dtype=float).reshape(-1, 2)
    if len(members) < 2:
        return None
    hull = convex_hull(members)
    if len(hull) == 1:
        return None
    if not hull.is_polygon:
        return segment_distance(p, hull.vertices[0], hull.vertices[1]) - robot_radius
    d = boundary_distance(p, hull)
    signed = -d if bool(points_in_polygon(hull.vertices, p)[0]) else d
    if hull_width(hull.vertices) < 2.0 * robot_radius:
        return signed - robot_radius
    return signed


def _signed_series(record: EpisodeRecord) -> list[float | None]:
    out = []
    for t in range(record.ticks):
        p = record.robot[t, :2]
        groups = record.group_points[t] if record.group_points else []
        ds = [d for g in groups if (d := group_signed_distance(p, g, record.robot_radius)) is not None]
        out.append(min(ds) if ds else None)
    return out


def time_disturbing_group(record: EpisodeRecord, series: list[float | None] | None = None) -> float:
    """Time with the robot strictly inside any ground-truth group hull."""
    series = _signed_series(record) if series is None else series
    return sum(1 for d in series if d is not None and d < 0.0) * record.dt


def comfort_distance(record: EpisodeRecord, series: list[float | None] | None = None) -> float:
    """Time-averaged signed distance to the nearest group hull; NaN if no group ever exists."""
    series = _signed_series(record) if series is None else series
    ds = [d for d in series if d is not None]
    return float(np.mean(ds)) if ds else math.nan


def _nearest_segment_bearings(points: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Bearing of the reference segment closest to each point."""
    seg = np.diff(ref, axis=0)
    keep = np.hypot(seg[:, 0], seg[:, 1]) > 1e-12
    a, seg = ref[:-1][keep], seg[keep]
    rel = points[:, None, :] - a[None, :, :]
    t = np.clip((rel * seg[None]).sum(axis=2) / (seg**2).sum(axis=1)[None, :], 0.0, 1.0)
    d = np.hypot(*(rel - t[..., None] * seg[None]).transpose(2, 0, 1))
    nearest = np.argmin(d, axis=1)
    return np.arctan2(seg[nearest, 1], seg[nearest, 0])


def path_quality(record: EpisodeRecord) -> tuple[float, float, float, float, float]:
    """(roughness, curvature, jerk, angular deviation, velocity) by finite differences."""
    P = record.robot[:, :2]
    if len(P) < 4:
        raise ValueError("path quality needs at least 4 trajectory samples")
    dt = record.dt
    second = P[2:] - 2.0 * P[1:-1] + P[:-2]
    roughness = float(np.mean((second**2).sum(axis=1)))
    vel = (P[2:] - P[:-2]) / (2.0 * dt)
    acc = second / dt**2
    speed = np.hypot(vel[:, 0], vel[:, 1])
    moving = speed > 1e-6
    if moving.any():
        cross = np.abs(vel[moving, 0] * acc[moving, 1] - vel[moving, 1] * acc[moving, 0])
        curvature = float(np.mean(cross / speed[moving] ** 3))
    else:
        curvature = 0.0
    third = P[3:] - 3.0 * P[2:-1] + 3.0 * P[1:-2] - P[:-3]
    jerk = float(np.mean(np.hypot(third[:, 0], third[:, 1]))) / dt**3
    step = np.diff(P, axis=0)
    velocity = float(np.mean(np.hypot(step[:, 0], step[:, 1]))) / dt
    ref = record.reference
    if ref is not None and len(ref) >= 2:
        bearing = _nearest_segment_bearings(P, np.asarray(ref, dtype=float))
        angular = float(np.mean([abs(wrap_angle(d)) for d in record.robot[:, 2] - bearing]))
    else:
        angular = 0.0
    return roughness, curvature, jerk, angular, velocity


def evaluate(record: EpisodeRecord, literal_yaw: bool = False) -> MetricReport:
    P = record.robot[:, :2]
    steps = np.diff(P, axis=0)
    length = float(np.hypot(steps[:, 0], steps[:, 1]).sum()) if len(P) > 1 else 0.0
    success, ttg = False, math.nan
    if record.goal is not None and len(P):
        d = np.hypot(P[:, 0] - record.goal[0], P[:, 1] - record.goal[1])
        hit = np.flatnonzero(d <= GOAL_TOLERANCE)
        if len(hit):
            success, ttg = True, float(hit[0] * record.dt)
    if len(P) >= 4:
        quality = path_quality(record)
    else:
        quality = (math.nan,) * 5
    series = _signed_series(record)
    return MetricReport(
        time_disturbing_individual(record, literal_yaw),
        time_disturbing_group(record, series),
        comfort_distance(record, series),
        success,
        ttg,
        length,
        *quality,
    )


def write_reports(path, rows: list[dict], extra_fields: list[str]) -> None:
    """One CSV row per episode; ``extra_fields`` (scenario, seed, ...) come first."""
    path = FsPath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=extra_fields + REPORT_FIELDS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r.get(k, "") for k in extra_fields + REPORT_FIELDS})


def aggregate(rows: list[dict], key: str = "archetype") -> list[dict]:
    """Mean and standard deviation of every metric per value of ``key`` (NaNs skipped)."""
    by_key: dict[str, list[dict]] = {}
    for r in rows:
        by_key.setdefault(str(r[key]), []).append(r)
    out = []
    for k in sorted(by_key):
        group = by_key[k]
        row: dict = {key: k, "episodes": len(group)}
        for name in REPORT_FIELDS:
            vals = np.array([float(r[name]) for r in group if r.get(name) not in (None, "")], dtype=float)
            vals = vals[~np.isnan(vals)]
            row[f"{name}_mean"] = float(vals.mean()) if len(vals) else math.nan
            row[f"{name}_std"] = float(vals.std()) if len(vals) else math.nan
        out.append(row)
    return out


def write_aggregate(path, rows: list[dict], key: str = "archetype") -> list[dict]:
    agg = aggregate(rows, key)
    path = FsPath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [key, "episodes"] + [f"{n}_{s}" for n in REPORT_FIELDS for s in ("mean", "std")]
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=names)
        writer.writeheader()
        writer.writerows(agg)
    return agg
