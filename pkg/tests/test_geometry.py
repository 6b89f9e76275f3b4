import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsonnav.geometry import (
    Ellipse,
    boundary_distance,
    convex_hull,
    ellipses_enclose,
    point_in_region,
    points_in_polygon,
    social_space,
    update_costmap,
)
from gsonnav.world import FREE, LETHAL, SOCIAL, CostMap

from oracles import hull_extremes, in_region


def test_hull_matches_triangle_oracle_on_random_inputs():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        pts = [tuple(map(float, rng.integers(0, 6, size=2))) for _ in range(n)]
        hull = convex_hull(pts)
        got = {tuple(v) for v in hull.vertices}
        assert got == hull_extremes(pts), pts


def test_hull_is_counter_clockwise():
    hull = convex_hull([(0, 0), (2, 0), (2, 2), (0, 2), (1, 1)])
    v = hull.vertices
    area = 0.5 * sum(v[k, 0] * v[(k + 1) % len(v), 1] - v[(k + 1) % len(v), 0] * v[k, 1] for k in range(len(v)))
    assert area == pytest.approx(4.0)


def test_hull_degenerate_cases():
    assert len(convex_hull([(1, 1), (1, 1)])) == 1
    collinear = convex_hull([(0, 0), (1, 1), (3, 3), (2, 2)])
    assert {tuple(v) for v in collinear.vertices} == {(0.0, 0.0), (3.0, 3.0)}
    with pytest.raises(ValueError):
        convex_hull([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=3, max_size=30))
def test_hull_contains_every_input_point(points):
    hull = convex_hull(points)
    assert {tuple(v) for v in hull.vertices} <= {(float(x), float(y)) for x, y in points}
    if hull.is_polygon:
        scale = max(1.0, float(np.abs(np.asarray(points)).max()))
        # shrink towards the centroid slightly so round-off cannot reject boundary points
        c = hull.centroid()
        grown = c + (hull.vertices - c) * (1.0 + 1e-9 * scale)
        assert points_in_polygon(grown, points).all()


def test_ellipse_construction_rule():
    hull = convex_hull([(0, 0), (2, 0)])
    (e,) = ellipses_enclose(hull, 0.4)
    assert np.allclose(e.center, (1.0, 0.0))
    assert (e.a, e.b, e.orientation) == pytest.approx((1.4, 0.4, 0.0))
    (c,) = ellipses_enclose(convex_hull([(3, 4)]), 0.4)
    assert (c.a, c.b) == (0.4, 0.4)
    with pytest.raises(ValueError):
        ellipses_enclose(hull, 0.0)


def test_ellipses_cover_hull_boundary_at_1cm():
    rng = np.random.default_rng(7)
    for _ in range(100):
        pts = rng.uniform(-3, 3, size=(int(rng.integers(1, 9)), 2))
        margin = float(rng.uniform(0.05, 1.0))
        hull = convex_hull(pts)
        ellipses = ellipses_enclose(hull, margin)
        edges = hull.edges() or [(hull.vertices[0], hull.vertices[0])]
        for a, b in edges:
            n = max(int(math.ceil(np.linalg.norm(b - a) / 0.01)), 1)
            samples = a + np.linspace(0, 1, n + 1)[:, None] * (b - a)
            covered = np.zeros(len(samples), dtype=bool)
            for e in ellipses:
                covered |= e.contains(samples)
            assert covered.all()


def test_update_costmap_matches_per_cell_sweep():
    rng = np.random.default_rng(11)
    for _ in range(10):
        base = CostMap.empty(6.0, 5.0, 0.1, origin=(-1.0, -0.5))
        cost = base.cost.copy()
        cost[rng.random(cost.shape) < 0.05] = LETHAL
        base = base.with_cost(cost)
        spaces = [social_space(rng.uniform(0, 4, size=(int(rng.integers(1, 6)), 2)), 0.5, g) for g in range(2)]
        out = update_costmap(spaces, base)
        xs, ys = base.cell_centers()
        for j, y in enumerate(ys):
            for i, x in enumerate(xs):
                inside = any(in_region((x, y), s.hull.vertices, s.ellipses) for s in spaces)
                expected = max(int(base.cost[j, i]), SOCIAL) if inside else int(base.cost[j, i])
                assert out.cost[j, i] == expected
    assert update_costmap([], base) is base


def test_update_costmap_leaves_input_untouched():
    base = CostMap.empty(3, 3, 0.1)
    out = update_costmap([social_space([(1.5, 1.5)], 0.5)], base)
    assert (base.cost == FREE).all()
    assert out.cost_at((1.5, 1.5)) == SOCIAL


def test_point_in_region_and_boundary_distance():
    space = social_space([(0, 0), (2, 0), (1, 2)], 0.5)
    assert point_in_region((1.0, 0.5), space)
    assert point_in_region((1.0, -0.45), [space])
    assert not point_in_region((1.0, -0.6), space)
    square = convex_hull([(0, 0), (2, 0), (2, 2), (0, 2)])
    assert boundary_distance((1.0, 0.5), square) == pytest.approx(0.5)
    assert boundary_distance((3.0, 1.0), square) == pytest.approx(1.0)


def test_ellipse_rejects_bad_axes():
    with pytest.raises(ValueError):
        Ellipse(np.zeros(2), 0.2, 0.5, 0.0)
