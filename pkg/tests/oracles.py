"""Brute-force reference implementations shared by the unit and acceptance tests."""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra


def in_triangle(p, a, b, c) -> bool:
    """Closed containment in a possibly degenerate triangle, exact on integer input."""

    def cross(o, u, v):
        return (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])

    area = cross(a, b, c)
    if area == 0:
        # degenerate: on one of the three segments
        for u, v in ((a, b), (b, c), (a, c)):
            if cross(u, v, p) == 0 and min(u[0], v[0]) <= p[0] <= max(u[0], v[0]) and min(u[1], v[1]) <= p[1] <= max(u[1], v[1]):
                return True
        return False
    d1, d2, d3 = cross(a, b, p), cross(b, c, p), cross(c, a, p)
    if area > 0:
        return d1 >= 0 and d2 >= 0 and d3 >= 0
    return d1 <= 0 and d2 <= 0 and d3 <= 0


def hull_extremes(points) -> set[tuple[float, float]]:
    """O(n^3) hull: a point is a vertex iff no triangle of the other points contains it."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return set(pts)
    out = set()
    for p in pts:
        others = [q for q in pts if q != p]
        covered = any(in_triangle(p, *tri) for tri in itertools.combinations(others, 3))
        if not covered and len(others) == 2:
            covered = in_triangle(p, others[0], others[1], others[1])
        if not covered:
            out.add(p)
    return out


def in_region(p, vertices, ellipses) -> bool:
    """Per-point social-region membership: triangle fan for the hull, quadratic form for ellipses."""
    if len(vertices) >= 3:
        for k in range(1, len(vertices) - 1):
            a, b, c = vertices[0], vertices[k], vertices[k + 1]
            d1 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
            d2 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0])
            d3 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])
            if min(d1, d2, d3) >= -1e-9:
                return True
    for e in ellipses:
        c, s = math.cos(e.orientation), math.sin(e.orientation)
        dx, dy = p[0] - e.center[0], p[1] - e.center[1]
        u, w = c * dx + s * dy, -s * dx + c * dy
        if (u / e.a) ** 2 + (w / e.b) ** 2 <= 1.0 + 1e-9:
            return True
    return False


def min_assignment_cost(cost: np.ndarray) -> float:
    """Exhaustive minimum over all injective row/column matchings."""
    n, m = cost.shape
    if n <= m:
        return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(m), n))
    return min(sum(cost[p[j], j] for j in range(m)) for p in itertools.permutations(range(n), m))


def keyframe_queries(counts: list[int], window_ticks: int) -> list[bool]:
    """Window argmax (ties to the newest frame); a query fires when the chosen frame changes."""
    fired = []
    current = None
    for k in range(len(counts)):
        lo = max(0, k - window_ticks)
        best = max(range(lo, k + 1), key=lambda j: (counts[j], j))
        if counts[best] == 0:
            fired.append(False)
            current = None
            continue
        fired.append(best != current)
        current = best
    return fired


def grid_dijkstra_cost(costmap, start, goal) -> float:
    """Shortest 8-connected path cost with scipy's Dijkstra, same step cost as the planner."""
    grid = costmap.cost
    h, w = grid.shape
    rows, cols, vals = [], [], []
    for j in range(h):
        for i in range(w):
            if grid[j, i] >= 253:
                continue
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    ni, nj = i + di, j + dj
                    if (di or dj) and 0 <= ni < w and 0 <= nj < h and grid[nj, ni] < 253:
                        rows.append(j * w + i)
                        cols.append(nj * w + ni)
                        vals.append(costmap.resolution * math.hypot(di, dj) * (1.0 + grid[nj, ni] / 128.0))
    graph = coo_matrix((vals, (rows, cols)), shape=(w * h, w * h)).tocsr()
    dist = dijkstra(graph, indices=start[1] * w + start[0])
    return float(dist[goal[1] * w + goal[0]])


def finite_difference(f, z, eps=1e-6) -> np.ndarray:
    """Central differences; returns the Jacobian (or gradient for scalar ``f``)."""
    out = []
    for i in range(len(z)):
        e = np.zeros_like(z)
        e[i] = eps
        out.append((np.asarray(f(z + e)) - np.asarray(f(z - e))) / (2 * eps))
    return np.array(out).T
