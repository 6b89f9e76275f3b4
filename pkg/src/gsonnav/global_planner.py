"""Global reference path: 8-connected A* on the inflated cost map plus line-of-sight shortcutting."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .world import SOCIAL_MIN, CostMap, Pose2D

SQRT2 = math.sqrt(2.0)
_MOVES = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
          (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2)]


class UnreachableError(RuntimeError):
    pass


@dataclass(frozen=True)
class Path:
    waypoints: np.ndarray  # (n, 2)
    cost: float

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def length(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1).sum())


def step_factor(cost) -> float:
    return 1.0 + cost / 128.0


def astar(costmap: CostMap, start: tuple[int, int], goal: tuple[int, int]) -> tuple[list[tuple[int, int]], float]:
    """Grid A*; a step costs its length (in metres) times ``1 + cost(target)/128``.

    Cells with cost >= 253 are impassable. Ties on f go to the smaller heuristic.
    Returns the cell sequence and its total cost.
    """
    grid = costmap.cost
    h, w = grid.shape
    res = costmap.resolution
    si, sj = start
    gi, gj = goal
    for i, j in (start, goal):
        if not (0 <= i < w and 0 <= j < h) or grid[j, i] >= SOCIAL_MIN:
            raise UnreachableError(f"cell {(i, j)} is blocked or outside the map")

    def heuristic(i, j):
        return res * math.hypot(i - gi, j - gj)

    g = {start: 0.0}
    parent: dict[tuple[int, int], tuple[int, int] | None] = {start: None}
    closed: set[tuple[int, int]] = set()
    h0 = heuristic(si, sj)
    heap = [(h0, h0, 0, start)]
    counter = 1
    while heap:
        _, _, _, node = heapq.heappop(heap)
        if node in closed:
            continue
        if node == goal:
            cells = []
            cur: tuple[int, int] | None = node
            while cur is not None:
                cells.append(cur)
                cur = parent[cur]
            return cells[::-1], g[goal]
        closed.add(node)
        i, j = node
        gn = g[node]
        for di, dj, length in _MOVES:
            ni, nj = i + di, j + dj
            if not (0 <= ni < w and 0 <= nj < h):
                continue
            c = grid[nj, ni]
            if c >= SOCIAL_MIN:
                continue
            nxt = (ni, nj)
            if nxt in closed:
                continue
            cand = gn + res * length * step_factor(float(c))
            if cand < g.get(nxt, math.inf):
                g[nxt] = cand
                parent[nxt] = node
                hn = heuristic(ni, nj)
                heapq.heappush(heap, (cand + hn, hn, counter, nxt))
                counter += 1
    raise UnreachableError(f"no path from {start} to {goal}")


def segment_samples(a, b, spacing: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = max(int(math.ceil(math.hypot(b[0] - a[0], b[1] - a[1]) / spacing)), 1)
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return a + t * (b - a)


def segment_free(costmap: CostMap, a, b, threshold: int = SOCIAL_MIN) -> bool:
    pts = segment_samples(a, b, costmap.resolution / 2.0)
    return bool((costmap.costs_at(pts) < threshold).all())


def shortcut(points: np.ndarray, costmap: CostMap) -> np.ndarray:
    """Greedy line-of-sight pruning: from each kept point jump to the farthest visible one."""
    if len(points) <= 2:
        return points.copy()
    kept = [0]
    k = 0
    n = len(points)
    while k < n - 1:
        nxt = k + 1
        for m in range(n - 1, k + 1, -1):
            if segment_free(costmap, points[k], points[m]):
                nxt = m
                break
        kept.append(nxt)
        k = nxt
    return points[kept]


def densify(points: np.ndarray, max_step: float) -> np.ndarray:
    """Insert evenly spaced points so consecutive points are at most ``max_step`` apart."""
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return points.copy()
    seg = np.diff(points, axis=0)
    counts = np.maximum(np.ceil(np.hypot(seg[:, 0], seg[:, 1]) / max_step).astype(np.int64), 1)
    owner = np.repeat(np.arange(len(seg)), counts)
    starts = np.cumsum(counts) - counts
    frac = (np.arange(counts.sum()) - starts[owner]) / counts[owner]
    out = points[owner] + frac[:, None] * seg[owner]
    return np.vstack([out, points[-1:]])


def path_cost(points: np.ndarray, costmap: CostMap) -> float:
    """Length weighted by the cost of the cells traversed, sampled at half resolution."""
    total = 0.0
    for a, b in zip(points[:-1], points[1:]):
        pts = segment_samples(a, b, costmap.resolution / 2.0)
        seg_len = float(np.linalg.norm(np.asarray(b) - np.asarray(a)))
        costs = costmap.costs_at(pts[1:]).astype(float)
        total += seg_len * float(np.mean(1.0 + costs / 128.0))
    return total


def plan_global(start: Pose2D, goal: Pose2D, costmap: CostMap, max_step: float = 0.25, smooth: bool = True) -> Path:
    """Reference path from ``start`` to ``goal`` on an already footprint-inflated map."""
    s = costmap.world_to_grid((start.x, start.y))
    g = costmap.world_to_grid((goal.x, goal.y))
    cells, cost = astar(costmap, s, g)
    pts = np.array([costmap.grid_to_world(c) for c in cells])
    pts[0] = (start.x, start.y)
    pts[-1] = (goal.x, goal.y)
    if not smooth:
        return Path(pts, cost)
    pts = densify(shortcut(pts, costmap), max_step)
    return Path(pts, path_cost(pts, costmap))
