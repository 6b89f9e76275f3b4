"""Core state types and the planar cost map."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

FREE = 0
SOCIAL = 254
SOCIAL_MIN = 253
LETHAL = 255


def wrap_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"non-finite pose {self.x, self.y, self.theta}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class ControlInput:
    v: float
    omega: float


@dataclass(frozen=True)
class RobotState:
    pose: Pose2D
    v: float = 0.0
    omega: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.pose.x, self.pose.y, self.pose.theta])

    @classmethod
    def from_array(cls, x, v: float = 0.0, omega: float = 0.0) -> "RobotState":
        return cls(Pose2D(float(x[0]), float(x[1]), float(x[2])), v, omega)


class Activity(str, Enum):
    QUEUE = "queue"
    CONVERSATION = "conversation"
    PHOTOGRAPHY = "photography"
    WALKING = "walking"


@dataclass
class PedestrianState:
    id: int
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    heading: float = 0.0

    def copy(self) -> "PedestrianState":
        return PedestrianState(self.id, self.position.copy(), self.velocity.copy(), self.heading)


@dataclass(frozen=True)
class SocialGroup:
    group_id: int
    member_ids: frozenset[int]
    activity: Activity | None = None

    def __post_init__(self):
        object.__setattr__(self, "member_ids", frozenset(int(m) for m in self.member_ids))
        if not self.member_ids:
            raise ValueError("a social group needs at least one member")


def check_disjoint(groups) -> None:
    seen: set[int] = set()
    for g in groups:
        if seen & g.member_ids:
            raise ValueError(f"group {g.group_id} shares members with another group")
        seen |= g.member_ids


@dataclass
class Trajectory:
    """Timestamped robot states with fixed spacing ``dt``."""

    dt: float
    times: list[float] = field(default_factory=list)
    states: list[RobotState] = field(default_factory=list)

    def append(self, t: float, state: RobotState) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError("trajectory timestamps must increase")
        self.times.append(t)
        self.states.append(state)

    def positions(self) -> np.ndarray:
        return np.array([[s.pose.x, s.pose.y] for s in self.states]).reshape(-1, 2)

    def headings(self) -> np.ndarray:
        return np.array([s.pose.theta for s in self.states])

    def __len__(self) -> int:
        return len(self.states)


class OutOfMapError(ValueError):
    pass


class CostMap:
    """Immutable grid of uint8 costs; ``cost[j, i]`` is row ``j`` (y), column ``i`` (x)."""

    def __init__(self, cost: np.ndarray, resolution: float, origin: tuple[float, float] = (0.0, 0.0)):
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        arr = np.array(cost, dtype=np.uint8, copy=True)
        if arr.ndim != 2:
            raise ValueError("cost grid must be 2D")
        arr.setflags(write=False)
        self._cost = arr
        self.resolution = float(resolution)
        self.origin = Pose2D(float(origin[0]), float(origin[1]), 0.0)

    @property
    def cost(self) -> np.ndarray:
        return self._cost

    @property
    def width(self) -> int:
        return self._cost.shape[1]

    @property
    def height(self) -> int:
        return self._cost.shape[0]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) in meters."""
        x0, y0 = self.origin.x, self.origin.y
        return x0, x0 + self.width * self.resolution, y0, y0 + self.height * self.resolution

    @classmethod
    def empty(cls, width_m: float, height_m: float, resolution: float, origin=(0.0, 0.0)) -> "CostMap":
        w = int(round(width_m / resolution))
        h = int(round(height_m / resolution))
        return cls(np.zeros((h, w), dtype=np.uint8), resolution, origin)

    def with_cost(self, cost: np.ndarray) -> "CostMap":
        return CostMap(cost, self.resolution, (self.origin.x, self.origin.y))

    def in_bounds(self, p) -> bool:
        xmin, xmax, ymin, ymax = self.extent
        return xmin <= p[0] < xmax and ymin <= p[1] < ymax

    def world_to_grid(self, p) -> tuple[int, int]:
        if not self.in_bounds(p):
            raise OutOfMapError(f"point {tuple(p)} outside map extent {self.extent}")
        i = int(math.floor((p[0] - self.origin.x) / self.resolution))
        j = int(math.floor((p[1] - self.origin.y) / self.resolution))
        return min(i, self.width - 1), min(j, self.height - 1)

    def grid_to_world(self, cell) -> tuple[float, float]:
        i, j = cell
        return (
            self.origin.x + (i + 0.5) * self.resolution,
            self.origin.y + (j + 0.5) * self.resolution,
        )

    def cost_at(self, p) -> int:
        if not self.in_bounds(p):
            return LETHAL
        i, j = self.world_to_grid(p)
        return int(self._cost[j, i])

    def costs_at(self, points: np.ndarray) -> np.ndarray:
        """Vectorised ``cost_at``; out-of-map points are lethal."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        i = np.floor((pts[:, 0] - self.origin.x) / self.resolution).astype(np.int64)
        j = np.floor((pts[:, 1] - self.origin.y) / self.resolution).astype(np.int64)
        inside = (i >= 0) & (i < self.width) & (j >= 0) & (j < self.height)
        out = np.full(len(pts), LETHAL, dtype=np.int64)
        out[inside] = self._cost[j[inside], i[inside]]
        return out

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin.x + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.origin.y + (np.arange(self.height) + 0.5) * self.resolution
        return xs, ys

    def __eq__(self, other) -> bool:
        if not isinstance(other, CostMap):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and self.origin == other.origin
            and np.array_equal(self._cost, other._cost)
        )

    def __repr__(self) -> str:
        return f"CostMap({self.width}x{self.height} @ {self.resolution} m, origin=({self.origin.x}, {self.origin.y}))"


def inflate(
    base: CostMap,
    robot_radius: float,
    inflation_radius: float = 0.5,
    decay: float = 5.0,
) -> CostMap:
    """Grow lethal cells by the robot footprint and add a graded band around them.

    Cells whose centre lies within ``robot_radius`` of a lethal cell become lethal.
    Beyond that, cost decays exponentially from 252 down to 1 over
    ``inflation_radius``. Existing costs are never lowered.
    """
    lethal = base.cost >= LETHAL
    if not lethal.any():
        return base
    dist = ndimage.distance_transform_edt(~lethal) * base.resolution
    cost = base.cost.astype(np.int64)
    # tolerance keeps cells exactly at the radius (up to round-off) on the lethal side
    inscribed = dist <= robot_radius + 1e-9
    band = (~inscribed) & (dist <= robot_radius + inflation_radius + 1e-9)
    graded = np.clip(np.round(252.0 * np.exp(-decay * (dist - robot_radius))), 1, 252)
    cost = np.where(band, np.maximum(cost, graded), cost)
    cost = np.where(inscribed, LETHAL, cost)
    return base.with_cost(cost.astype(np.uint8))


def load_map(image_path: str | Path) -> CostMap:
    """Load an 8-bit grayscale map image and its JSON sidecar.

    The sidecar (same stem, ``.json``) gives ``resolution``, ``origin`` and
    optionally ``occupied_thresh`` / ``free_thresh`` as occupancy probabilities,
    with pixel 0 meaning occupied. Unknown cells are lethal. Row 0 of the image
    is the top (largest y) of the map.
    """
    from PIL import Image

    image_path = Path(image_path)
    meta_path = image_path.with_suffix(".json")
    if not image_path.exists():
        raise FileNotFoundError(image_path)
    if not meta_path.exists():
        raise FileNotFoundError(f"missing map sidecar {meta_path}")
    meta = json.loads(meta_path.read_text())
    unknown = set(meta) - {"resolution", "origin", "occupied_thresh", "free_thresh"}
    if unknown:
        raise ValueError(f"unknown map metadata keys: {sorted(unknown)}")
    pixels = np.asarray(Image.open(image_path).convert("L"), dtype=float)
    occupancy = (255.0 - pixels) / 255.0
    occ_t = float(meta.get("occupied_thresh", 0.65))
    free_t = float(meta.get("free_thresh", 0.196))
    cost = np.full(pixels.shape, LETHAL, dtype=np.uint8)
    cost[occupancy < free_t] = FREE
    cost[(occupancy >= free_t) & (occupancy <= occ_t)] = LETHAL
    origin = meta.get("origin", [0.0, 0.0])
    return CostMap(np.flipud(cost), float(meta["resolution"]), (float(origin[0]), float(origin[1])))


def save_map(costmap: CostMap, image_path: str | Path) -> None:
    """Write ``costmap`` as image + sidecar; lethal cells become black, the rest white."""
    from PIL import Image

    image_path = Path(image_path)
    pixels = np.where(costmap.cost >= LETHAL, 0, 255).astype(np.uint8)
    Image.fromarray(np.flipud(pixels), mode="L").save(image_path)
    meta = {
        "resolution": costmap.resolution,
        "origin": [costmap.origin.x, costmap.origin.y],
        "occupied_thresh": 0.65,
        "free_thresh": 0.196,
    }
    image_path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")
