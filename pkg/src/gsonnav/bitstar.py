"""Batch Informed Trees (BIT*) on a cost map.

Edges are straight segments; a segment is in collision when any sample at
half-cell spacing lands on a cell with cost >= 253. Edge cost is its length
times the mean ``1 + cost/128`` factor along it, so the Euclidean heuristics
stay admissible.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from .global_planner import Path, densify, segment_samples
from .world import SOCIAL_MIN, CostMap, Pose2D


class NoSolutionError(RuntimeError):
    pass


class BITStar:
    def __init__(
        self,
        costmap: CostMap,
        start,
        goal,
        samples_per_batch: int = 200,
        eta: float = 1.1,
        rng: np.random.Generator | None = None,
    ):
        self.map = costmap
        self.start = np.asarray(start, dtype=float)
        self.goal = np.asarray(goal, dtype=float)
        self.m = samples_per_batch
        self.eta = eta
        self.rng = rng if rng is not None else np.random.default_rng(0)
        if costmap.cost_at(self.start) >= SOCIAL_MIN:
            raise NoSolutionError("start pose is not free on the cost map")
        if costmap.cost_at(self.goal) >= SOCIAL_MIN:
            raise NoSolutionError("goal pose is not free on the cost map")

        cap = 64
        self.X = np.zeros((cap, 2))
        self.g = np.full(cap, math.inf)
        self.parent = np.full(cap, -1, dtype=np.int64)
        self.in_tree = np.zeros(cap, dtype=bool)
        self.is_sample = np.zeros(cap, dtype=bool)
        self.children: dict[int, set[int]] = {}
        self.n = 0
        self._add(self.start, tree=True)
        self.g[0] = 0.0
        self._add(self.goal, tree=False)
        self.c_min = float(np.linalg.norm(self.goal - self.start))
        self.free_area = float((costmap.cost < SOCIAL_MIN).sum()) * costmap.resolution**2
        self.cost_history: list[float] = []
        self.collision_checks = 0
        self._edge_cache: dict[tuple[int, int], float] = {}

    @property
    def c_best(self) -> float:
        return float(self.g[1])

    def _add(self, p, tree: bool) -> int:
        if self.n == len(self.X):
            cap = 2 * len(self.X)
            self.X = np.resize(self.X, (cap, 2))
            self.g = np.concatenate([self.g, np.full(cap - len(self.g), math.inf)])
            self.parent = np.concatenate([self.parent, np.full(cap - len(self.parent), -1)])
            self.in_tree = np.concatenate([self.in_tree, np.zeros(cap - len(self.in_tree), dtype=bool)])
            self.is_sample = np.concatenate([self.is_sample, np.zeros(cap - len(self.is_sample), dtype=bool)])
        k = self.n
        self.X[k] = p
        self.in_tree[k] = tree
        self.is_sample[k] = not tree
        self.n += 1
        return k

    def _g_hat(self, idx):
        return np.linalg.norm(self.X[idx] - self.start, axis=-1)

    def _h_hat(self, idx):
        return np.linalg.norm(self.X[idx] - self.goal, axis=-1)

    def _f_hat(self, idx):
        return self._g_hat(idx) + self._h_hat(idx)

    def _sample(self, count: int) -> None:
        xmin, xmax, ymin, ymax = self.map.extent
        c_best = self.c_best
        added = 0
        attempts = 0
        while added < count and attempts < 200:
            attempts += 1
            batch = 4 * (count - added)
            if math.isfinite(c_best):
                pts = self._informed(batch, c_best)
            else:
                pts = np.column_stack(
                    [self.rng.uniform(xmin, xmax, batch), self.rng.uniform(ymin, ymax, batch)]
                )
            pts = pts[self.map.costs_at(pts) < SOCIAL_MIN]
            for p in pts[: count - added]:
                self._add(p, tree=False)
                added += 1

    def _informed(self, count: int, c_best: float) -> np.ndarray:
        """Uniform samples from the ellipse of points whose start+goal distance is below ``c_best``."""
        center = (self.start + self.goal) / 2.0
        axis = self.goal - self.start
        theta = math.atan2(axis[1], axis[0])
        r1 = c_best / 2.0
        r2 = math.sqrt(max(c_best**2 - self.c_min**2, 0.0)) / 2.0
        rad = np.sqrt(self.rng.random(count))
        ang = self.rng.uniform(0.0, 2.0 * math.pi, count)
        local = np.column_stack([r1 * rad * np.cos(ang), r2 * rad * np.sin(ang)])
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        return center + local @ rot.T

    def _radius(self) -> float:
        q = max(int(self.in_tree[: self.n].sum() + self.is_sample[: self.n].sum()), 2)
        measure = self.free_area
        if math.isfinite(self.c_best):
            r1 = self.c_best / 2.0
            r2 = math.sqrt(max(self.c_best**2 - self.c_min**2, 0.0)) / 2.0
            measure = min(measure, math.pi * r1 * r2)
        # shrinking RGG radius for n = 2 dimensions
        gamma = 2.0 * self.eta * math.sqrt(1.5 * measure / math.pi)
        return gamma * math.sqrt(math.log(q) / q)

    def _edge_cost(self, a: int, b: int) -> float:
        key = (a, b) if a < b else (b, a)
        cached = self._edge_cache.get(key)
        if cached is not None:
            return cached
        self.collision_checks += 1
        pts = segment_samples(self.X[a], self.X[b], self.map.resolution / 2.0)
        costs = self.map.costs_at(pts)
        if (costs >= SOCIAL_MIN).any():
            value = math.inf
        else:
            length = math.hypot(*(self.X[b] - self.X[a]))
            value = length * float(np.mean(1.0 + costs / 128.0))
        self._edge_cache[key] = value
        return value

    def _set_parent(self, child: int, parent: int, g_new: float) -> None:
        old = int(self.parent[child])
        if old >= 0:
            self.children.get(old, set()).discard(child)
        self.parent[child] = parent
        self.children.setdefault(parent, set()).add(child)
        delta = self.g[child] - g_new if math.isfinite(self.g[child]) else None
        self.g[child] = g_new
        if delta is not None and delta > 0:
            stack = list(self.children.get(child, ()))
            while stack:
                w = stack.pop()
                self.g[w] -= delta
                stack.extend(self.children.get(w, ()))

    def _prune(self) -> None:
        c_best = self.c_best
        if not math.isfinite(c_best):
            return
        idx = np.arange(self.n)
        f = self._f_hat(idx)
        self.is_sample[: self.n] &= f < c_best
        doomed = [int(v) for v in idx[self.in_tree[: self.n] & (f > c_best + 1e-9)] if v not in (0, 1)]
        for v in doomed:
            if not self.in_tree[v]:
                continue
            stack = [v]
            while stack:
                w = stack.pop()
                stack.extend(self.children.pop(w, ()))
                p = int(self.parent[w])
                if p >= 0:
                    self.children.get(p, set()).discard(w)
                self.in_tree[w] = False
                self.parent[w] = -1
                self.g[w] = math.inf
                # disconnected but still useful vertices go back to the sample set
                self.is_sample[w] = bool(f[w] < c_best)

    def run(self, batches: int = 5) -> Path:
        for _ in range(batches):
            self._batch()
            self.cost_history.append(self.c_best)
        if not math.isfinite(self.c_best):
            raise NoSolutionError(f"no path found after {batches} batches")
        return self.solution()

    def _batch(self) -> None:
        self._prune()
        self._sample(self.m)
        r = self._radius()
        n = self.n
        vertices = np.flatnonzero(self.in_tree[:n])
        v_old = set(int(v) for v in vertices)
        qv: list[tuple[float, int]] = []
        h_hat_all = self._h_hat(np.arange(n))
        for v in vertices:
            heapq.heappush(qv, (self.g[v] + h_hat_all[v], int(v)))
        qe: list[tuple[float, float, int, int]] = []
        expanded_at: dict[int, float] = {}

        def expand(v: int) -> None:
            gv = self.g[v]
            if expanded_at.get(v, math.inf) <= gv:
                return
            expanded_at[v] = gv
            c_best = self.c_best
            diff = self.X[:n] - self.X[v]
            d = np.sqrt(diff[:, 0] ** 2 + diff[:, 1] ** 2)
            near = (d <= r) & (np.arange(n) != v)
            g_hat_v = self._g_hat(v)
            for x in np.flatnonzero(near & self.is_sample[:n]):
                est = g_hat_v + d[x] + h_hat_all[x]
                if est < c_best:
                    heapq.heappush(qe, (gv + d[x] + h_hat_all[x], gv + d[x], v, int(x)))
            if v not in v_old:
                for w in np.flatnonzero(near & self.in_tree[:n]):
                    w = int(w)
                    if w == self.parent[v] or self.parent[w] == v:
                        continue
                    if g_hat_v + d[w] + h_hat_all[w] < c_best and gv + d[w] < self.g[w]:
                        heapq.heappush(qe, (gv + d[w] + h_hat_all[w], gv + d[w], v, w))

        while True:
            while qv and (not qe or qv[0][0] <= qe[0][0]):
                _, v = heapq.heappop(qv)
                if self.in_tree[v]:
                    expand(v)
            if not qe:
                break
            key, _, v, x = heapq.heappop(qe)
            if key >= self.c_best:
                break
            if not self.in_tree[v]:
                continue
            chat = math.hypot(*(self.X[x] - self.X[v]))
            gv = self.g[v]
            if self.in_tree[x] and gv + chat >= self.g[x]:
                continue
            if gv + chat + h_hat_all[x] >= self.c_best:
                continue
            c = self._edge_cost(v, x)
            if not math.isfinite(c):
                continue
            if gv + c + h_hat_all[x] < self.c_best and gv + c < self.g[x]:
                if not self.in_tree[x]:
                    self.in_tree[x] = True
                    self.is_sample[x] = False
                self._set_parent(x, v, gv + c)
                heapq.heappush(qv, (self.g[x] + h_hat_all[x], x))

    def solution(self) -> Path:
        chain = [1]
        while chain[-1] != 0:
            chain.append(int(self.parent[chain[-1]]))
        pts = self.X[chain[::-1]].copy()
        return Path(pts, self.c_best)


def plan_bitstar(
    x_start: Pose2D,
    x_goal: Pose2D,
    costmap: CostMap,
    batches: int = 5,
    samples_per_batch: int = 200,
    rng: np.random.Generator | None = None,
    max_step: float = 0.25,
) -> Path:
    """Best BIT* path after ``batches`` batches, densified to ``max_step`` spacing."""
    planner = BITStar(costmap, (x_start.x, x_start.y), (x_goal.x, x_goal.y), samples_per_batch, rng=rng)
    path = planner.run(batches)
    return Path(densify(path.waypoints, max_step), path.cost)
