"""Group-aware mid-level replanning between the global path and the local controller.

Each cycle builds the social space of every estimated group from the live
tracks, marks it on a copy of the cost map, and checks the remaining reference
path against it. On conflict a detour goal is sampled beside the reference,
past the conflict, and BIT* plans a seclusion path to it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import ndimage

from .bitstar import NoSolutionError, plan_bitstar
from .estimation import GroupEstimate
from .geometry import SocialSpace, point_in_region, social_space, update_costmap
from .global_planner import Path, densify
from .perception import Track
from .world import SOCIAL_MIN, CostMap, Pose2D, RobotState

log = logging.getLogger(__name__)


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True)
class MidLevelConfig:
    margin: float = 0.5
    goal_offset: float = 1.0
    batches: int = 5
    samples_per_batch: int = 200
    rejoin_tolerance: float = 0.5
    escape_radius: float = 0.8
    plan_buffer: float = 0.15
    comfort_band: float = 1.0
    comfort_decay: float = 3.0


class Flag(str, Enum):
    KEPT_REFERENCE = "kept_reference"
    REPLANNED = "replanned"


@dataclass
class MidLevelOutput:
    path: Path
    flag: Flag
    x_goal: Pose2D | None = None
    conflict_cells: int = 0
    spaces: list[SocialSpace] = field(default_factory=list)
    costmap: CostMap | None = None
    planned: bool = False


def sample_points(points: np.ndarray, spacing: float) -> np.ndarray:
    return densify(np.asarray(points, dtype=float), spacing)


def is_collided(path: Path | np.ndarray, costmap: CostMap) -> bool:
    """True when any point sampled along ``path`` at half-cell spacing hits a cell of cost >= 253."""
    pts = path.waypoints if isinstance(path, Path) else np.asarray(path, dtype=float)
    if len(pts) == 0:
        return False
    dense = sample_points(pts, costmap.resolution / 2.0)
    return bool((costmap.costs_at(dense) >= SOCIAL_MIN).any())


def _tangent(pts: np.ndarray, k: int) -> float:
    a = pts[max(k - 1, 0)]
    b = pts[min(k + 1, len(pts) - 1)]
    return math.atan2(b[1] - a[1], b[0] - a[0])


def sample_new_goal(
    reference: Path,
    robot: Pose2D,
    spaces: list[SocialSpace],
    costmap: CostMap,
    offset: float = 1.0,
) -> Pose2D:
    """Detour goal beside the reference path, just past its first conflict.

    Walks the reference beyond the first blocked stretch and returns the first
    point at ``offset`` to the left, else to the right, that is free and outside
    every social region; failing that, the first free point on the reference
    itself. The goal heading follows the reference.
    """
    if len(reference) == 0:
        raise PlanningError("empty reference path")
    pts = sample_points(reference.waypoints, costmap.resolution / 2.0)
    blocked = costmap.costs_at(pts) >= SOCIAL_MIN
    if not blocked.any():
        raise PlanningError("reference path has no conflict to detour around")
    first = int(np.argmax(blocked))
    clear_after = np.flatnonzero(~blocked[first:])
    if len(clear_after) == 0:
        raise PlanningError("conflict extends to the end of the reference path")
    resume = first + int(clear_after[0])
    for k in range(resume, len(pts)):
        heading = _tangent(pts, k)
        normal = np.array([-math.sin(heading), math.cos(heading)])
        for side in (1.0, -1.0):
            cand = pts[k] + side * offset * normal
            if costmap.cost_at(cand) < SOCIAL_MIN and not point_in_region(cand, spaces):
                return Pose2D(float(cand[0]), float(cand[1]), heading)
    for k in range(resume, len(pts)):
        if not blocked[k]:
            return Pose2D(float(pts[k][0]), float(pts[k][1]), _tangent(pts, k))
    raise PlanningError("no free detour goal along the remaining reference")


def build_spaces(estimate: GroupEstimate | None, tracks: list[Track], margin: float) -> list[SocialSpace]:
    if estimate is None:
        return []
    pos = {t.track_id: t.state[:2] for t in tracks}
    spaces = []
    for g in estimate.groups:
        pts = [pos[m] for m in sorted(g.member_ids) if m in pos]
        if pts:
            spaces.append(social_space(pts, margin, g.group_id))
    return spaces


def nearest_index(points: np.ndarray, p, start: int = 0, window: int | None = None) -> int:
    stop = len(points) if window is None else min(len(points), start + window)
    seg = points[start:stop]
    if len(seg) == 0:
        return max(len(points) - 1, 0)
    d = np.linalg.norm(seg - np.asarray(p)[None, :], axis=1)
    return start + int(np.argmin(d))


class MidLevelPlanner:
    """Stateful per-episode wrapper; keeps the issued seclusion path between cycles."""

    def __init__(
        self,
        reference: Path,
        costmap: CostMap,
        config: MidLevelConfig | None = None,
        rng: np.random.Generator | None = None,
        enabled: bool = True,
    ):
        self.reference = reference
        self.costmap = costmap
        self.config = config or MidLevelConfig()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.enabled = enabled
        self.ref_index = 0
        self.seclusion: Path | None = None
        self.x_goal: Pose2D | None = None
        self.sec_index = 0

    def remaining_reference(self, robot: Pose2D) -> Path:
        pts = self.reference.waypoints
        self.ref_index = nearest_index(pts, (robot.x, robot.y), self.ref_index, window=80)
        return Path(pts[self.ref_index :], self.reference.cost)

    def _planning_map(self, cplus: CostMap, robot: Pose2D) -> CostMap:
        """Cost map handed to BIT*.

        Adds a graded band outside the social regions, so the seclusion path
        keeps clear of a group instead of skimming its boundary, and lifts
        social cost around the robot so a robot standing in a region can
        still plan out.
        """
        cfg = self.config
        social = (cplus.cost >= SOCIAL_MIN) & (self.costmap.cost < SOCIAL_MIN)
        cost = cplus.cost
        if cfg.comfort_band > 0 and social.any():
            dist = ndimage.distance_transform_edt(~social) * cplus.resolution
            band = (~social) & (dist <= cfg.comfort_band)
            graded = np.clip(np.round(252.0 * np.exp(-cfg.comfort_decay * dist)), 1, 252).astype(np.int64)
            cost = np.where(band, np.maximum(cost.astype(np.int64), graded), cost).astype(np.uint8)
        if cplus.cost_at((robot.x, robot.y)) >= SOCIAL_MIN and self.costmap.cost_at((robot.x, robot.y)) < SOCIAL_MIN:
            xs, ys = cplus.cell_centers()
            gx, gy = np.meshgrid(xs, ys)
            near = np.hypot(gx - robot.x, gy - robot.y) <= cfg.escape_radius
            cost = np.where(near, self.costmap.cost, cost)
        return cplus.with_cost(cost)

    def cycle(self, estimate: GroupEstimate | None, tracks: list[Track], robot: RobotState) -> MidLevelOutput:
        pose = robot.pose
        if self.seclusion is not None and self.x_goal is not None:
            end = self.seclusion.waypoints[-1]
            if np.hypot(end[0] - pose.x, end[1] - pose.y) <= self.config.rejoin_tolerance:
                # detour finished: resume the reference from the point beside x_goal
                j = nearest_index(self.reference.waypoints, (self.x_goal.x, self.x_goal.y))
                self.ref_index = max(self.ref_index, j)
                self.seclusion = None
                self.x_goal = None
        r_rem = self.remaining_reference(pose)
        if not self.enabled:
            return MidLevelOutput(r_rem, Flag.KEPT_REFERENCE)
        cfg = self.config
        spaces = build_spaces(estimate, tracks, cfg.margin)
        cplus = update_costmap(spaces, self.costmap)
        conflict = int(((cplus.cost >= SOCIAL_MIN) & (self.costmap.cost < SOCIAL_MIN)).sum())
        if not is_collided(r_rem, cplus):
            self.seclusion = None
            self.x_goal = None
            return MidLevelOutput(r_rem, Flag.KEPT_REFERENCE, None, conflict, spaces, cplus)

        if self.seclusion is not None:
            pts = self.seclusion.waypoints
            self.sec_index = nearest_index(pts, (pose.x, pose.y), self.sec_index, window=80)
            s_rem = Path(pts[self.sec_index :], self.seclusion.cost)
            if not is_collided(s_rem, cplus):
                return MidLevelOutput(s_rem, Flag.REPLANNED, self.x_goal, conflict, spaces, cplus)

        # plan against slightly wider regions so that track noise does not
        # immediately push the fresh path back into conflict
        wide = build_spaces(estimate, tracks, cfg.margin + cfg.plan_buffer)
        cwide = update_costmap(wide, self.costmap)
        x_goal = sample_new_goal(r_rem, pose, wide, cwide, cfg.goal_offset)
        plan_map = self._planning_map(cwide, pose)
        try:
            path = plan_bitstar(pose, x_goal, plan_map, cfg.batches, cfg.samples_per_batch, rng=self.rng)
        except NoSolutionError as exc:
            raise PlanningError(str(exc)) from exc
        self.seclusion = path
        self.x_goal = x_goal
        self.sec_index = 0
        return MidLevelOutput(path, Flag.REPLANNED, x_goal, conflict, spaces, plan_map, planned=True)


def midlevel_cycle(
    reference: Path,
    costmap: CostMap,
    estimate: GroupEstimate | None,
    tracks: list[Track],
    robot: RobotState,
    config: MidLevelConfig | None = None,
    rng: np.random.Generator | None = None,
) -> MidLevelOutput:
    """Single stateless cycle: keep ``reference`` or return a fresh seclusion path."""
    return MidLevelPlanner(reference, costmap, config, rng).cycle(estimate, tracks, robot)
