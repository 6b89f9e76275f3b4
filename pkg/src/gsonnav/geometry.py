"""Group social space: convex hulls, edge-enclosing ellipses and the costmap update."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import SOCIAL, CostMap

_EPS = 1e-9


@dataclass(frozen=True)
class ConvexHull:
    vertices: np.ndarray  # (k, 2), counter-clockwise

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def is_polygon(self) -> bool:
        return len(self.vertices) >= 3

    def edges(self) -> list[tuple[np.ndarray, np.ndarray]]:
        v = self.vertices
        if len(v) < 2:
            return []
        if len(v) == 2:
            return [(v[0], v[1])]
        return [(v[k], v[(k + 1) % len(v)]) for k in range(len(v))]

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> ConvexHull:
    """Monotone-chain hull without collinear vertices.

    One distinct point gives a one-vertex hull; collinear inputs give the two
    extreme points.
    """
    pts = sorted({(float(p[0]), float(p[1])) for p in points})
    if not pts:
        raise ValueError("convex hull of an empty point set")
    if len(pts) <= 2:
        return ConvexHull(np.array(pts, dtype=float))

    lower: list[tuple[float, float]] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[float, float]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        # all collinear: monotone chain degenerates to the two extremes
        return ConvexHull(np.array([pts[0], pts[-1]], dtype=float))
    return ConvexHull(np.array(hull, dtype=float))


@dataclass(frozen=True)
class Ellipse:
    center: np.ndarray
    a: float
    b: float
    orientation: float

    def __post_init__(self):
        if not (self.a >= self.b > 0):
            raise ValueError(f"ellipse needs a >= b > 0, got a={self.a}, b={self.b}")

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        d = pts - self.center
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        u = (c * d[:, 0] + s * d[:, 1]) / self.a
        w = (-s * d[:, 0] + c * d[:, 1]) / self.b
        return u * u + w * w <= 1.0 + _EPS

    def bounds(self) -> tuple[float, float, float, float]:
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        hx = math.hypot(self.a * c, self.b * s)
        hy = math.hypot(self.a * s, self.b * c)
        return self.center[0] - hx, self.center[0] + hx, self.center[1] - hy, self.center[1] + hy


def ellipses_enclose(hull: ConvexHull, margin: float) -> list[Ellipse]:
    """One ellipse per hull edge, padded by ``margin`` along and across the edge."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    v = hull.vertices
    if len(v) == 1:
        return [Ellipse(v[0].copy(), margin, margin, 0.0)]
    out = []
    for p, q in hull.edges():
        d = q - p
        length = float(np.hypot(d[0], d[1]))
        out.append(Ellipse((p + q) / 2.0, length / 2.0 + margin, margin, math.atan2(d[1], d[0])))
    return out


def points_in_polygon(vertices: np.ndarray, points) -> np.ndarray:
    """Closed containment test for a CCW convex polygon."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    inside = np.ones(len(pts), dtype=bool)
    n = len(vertices)
    for k in range(n):
        a = vertices[k]
        b = vertices[(k + 1) % n]
        cross = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
        inside &= cross >= -_EPS
    return inside


@dataclass(frozen=True)
class SocialSpace:
    hull: ConvexHull
    ellipses: tuple[Ellipse, ...]
    margin: float
    group_id: int | None = None

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        hit = np.zeros(len(pts), dtype=bool)
        if self.hull.is_polygon:
            hit |= points_in_polygon(self.hull.vertices, pts)
        for e in self.ellipses:
            hit |= e.contains(pts)
        return hit

    def bounds(self) -> tuple[float, float, float, float]:
        boxes = np.array([e.bounds() for e in self.ellipses])
        return boxes[:, 0].min(), boxes[:, 1].max(), boxes[:, 2].min(), boxes[:, 3].max()


def social_space(points, margin: float, group_id: int | None = None) -> SocialSpace:
    hull = convex_hull(points)
    return SocialSpace(hull, tuple(ellipses_enclose(hull, margin)), margin, group_id)


def point_in_region(p, spaces) -> bool:
    """True when ``p`` lies in the hull or any ellipse of any of ``spaces``."""
    if isinstance(spaces, SocialSpace):
        spaces = [spaces]
    return any(bool(s.contains(p)[0]) for s in spaces)


def update_costmap(spaces, base: CostMap) -> CostMap:
    """Return a copy of ``base`` with every cell whose centre is in a social region raised to 254."""
    spaces = list(spaces)
    if not spaces:
        return base
    cost = base.cost.copy()
    xs, ys = base.cell_centers()
    for space in spaces:
        xmin, xmax, ymin, ymax = space.bounds()
        i0 = max(int(np.searchsorted(xs, xmin, side="left")), 0)
        i1 = min(int(np.searchsorted(xs, xmax, side="right")), base.width)
        j0 = max(int(np.searchsorted(ys, ymin, side="left")), 0)
        j1 = min(int(np.searchsorted(ys, ymax, side="right")), base.height)
        if i0 >= i1 or j0 >= j1:
            continue
        gx, gy = np.meshgrid(xs[i0:i1], ys[j0:j1])
        mask = space.contains(np.column_stack([gx.ravel(), gy.ravel()])).reshape(gx.shape)
        block = cost[j0:j1, i0:i1]
        block[mask] = np.maximum(block[mask], SOCIAL)
    return base.with_cost(cost)


def segment_distance(p, a, b) -> float:
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    d = b - a
    denom = float(d @ d)
    t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ d / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * d)))


def boundary_distance(p, hull: ConvexHull) -> float:
    """Unsigned distance from ``p`` to the hull boundary (vertex for a one-point hull)."""
    v = hull.vertices
    if len(v) == 1:
        return float(np.linalg.norm(np.asarray(p, dtype=float) - v[0]))
    return min(segment_distance(p, a, b) for a, b in hull.edges())
