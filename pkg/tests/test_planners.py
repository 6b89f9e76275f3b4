import math

import numpy as np
import pytest

from gsonnav.bitstar import BITStar, NoSolutionError, plan_bitstar
from gsonnav.global_planner import (
    Path,
    UnreachableError,
    astar,
    densify,
    path_cost,
    plan_global,
    segment_free,
    shortcut,
)
from gsonnav.world import LETHAL, SOCIAL, CostMap, Pose2D

from oracles import grid_dijkstra_cost


def test_astar_matches_dijkstra_on_random_maps():
    rng = np.random.default_rng(8)
    checked = 0
    while checked < 100:
        h, w = (int(v) for v in rng.integers(5, 16, size=2))
        cost = rng.integers(0, 200, size=(h, w))
        cost[rng.random((h, w)) < 0.25] = LETHAL
        cost[rng.random((h, w)) < 0.05] = SOCIAL
        m = CostMap(cost.astype(np.uint8), 0.1)
        free = np.argwhere(m.cost < 253)
        if len(free) < 2:
            continue
        a, b = free[rng.choice(len(free), 2, replace=False)]
        start, goal = (int(a[1]), int(a[0])), (int(b[1]), int(b[0]))
        expected = grid_dijkstra_cost(m, start, goal)
        if math.isinf(expected):
            with pytest.raises(UnreachableError):
                astar(m, start, goal)
        else:
            cells, cost_found = astar(m, start, goal)
            assert cost_found == pytest.approx(expected, rel=1e-12, abs=1e-12)
            assert cells[0] == start and cells[-1] == goal
        checked += 1


def test_astar_rejects_blocked_endpoints():
    m = CostMap.empty(1.0, 1.0, 0.1)
    cost = m.cost.copy()
    cost[0, 0] = LETHAL
    with pytest.raises(UnreachableError):
        astar(m.with_cost(cost), (0, 0), (5, 5))


def _empty_hall() -> CostMap:
    m = CostMap.empty(10.0, 6.0, 0.1)
    return m


def test_plan_global_on_empty_map_is_straight():
    m = _empty_hall()
    path = plan_global(Pose2D(1, 3), Pose2D(9, 3), m)
    assert np.allclose(path.waypoints[0], (1, 3)) and np.allclose(path.waypoints[-1], (9, 3))
    assert path.length == pytest.approx(8.0, abs=1e-9)
    assert np.max(np.linalg.norm(np.diff(path.waypoints, axis=0), axis=1)) <= 0.25 + 1e-12


def test_plan_global_detours_around_a_wall():
    m = _empty_hall()
    cost = m.cost.copy()
    cost[0:45, 48:52] = LETHAL  # wall from the bottom, gap at the top
    m = m.with_cost(cost)
    path = plan_global(Pose2D(1, 1), Pose2D(9, 1), m)
    assert path.waypoints[:, 1].max() > 4.5
    samples = densify(path.waypoints, 0.05)
    assert (m.costs_at(samples) < 253).all()


def test_densify_and_shortcut_helpers():
    pts = densify(np.array([[0.0, 0.0], [1.0, 0.0]]), 0.3)
    assert len(pts) == 5 and np.allclose(pts[-1], (1, 0))
    m = _empty_hall()
    zigzag = np.array([[1, 1], [2, 2], [3, 1], [4, 2]], dtype=float)
    assert len(shortcut(zigzag, m)) == 2
    assert segment_free(m, (1, 1), (8, 5))
    assert path_cost(np.array([[0.5, 0.5], [2.5, 0.5]]), m) == pytest.approx(2.0)


def test_bitstar_empty_map_within_5_percent_of_astar():
    m = _empty_hall()
    start, goal = Pose2D(1.0, 1.0), Pose2D(8.5, 5.0)
    cells, a_cost = astar(m, m.world_to_grid((start.x, start.y)), m.world_to_grid((goal.x, goal.y)))
    for seed in range(5):
        planner = BITStar(m, (start.x, start.y), (goal.x, goal.y), 200, rng=np.random.default_rng(seed))
        path = planner.run(5)
        assert path.cost <= 1.05 * a_cost
        assert all(b <= a + 1e-12 for a, b in zip(planner.cost_history, planner.cost_history[1:]))


def test_bitstar_cost_non_increasing_around_obstacle():
    m = _empty_hall()
    cost = m.cost.copy()
    cost[10:50, 45:55] = LETHAL
    m = m.with_cost(cost)
    planner = BITStar(m, (2.0, 3.0), (8.0, 3.0), 100, rng=np.random.default_rng(3))
    path = planner.run(8)
    finite = [c for c in planner.cost_history if math.isfinite(c)]
    assert finite and all(b <= a + 1e-12 for a, b in zip(finite, finite[1:]))
    dense = densify(path.waypoints, 0.05)
    assert (m.costs_at(dense) < 253).all()
    # the reported cost is the length weighted by traversed cost
    assert path.cost >= path.length - 1e-9


def test_bitstar_is_deterministic_per_seed():
    m = _empty_hall()
    a = plan_bitstar(Pose2D(1, 1), Pose2D(9, 5), m, rng=np.random.default_rng(4))
    b = plan_bitstar(Pose2D(1, 1), Pose2D(9, 5), m, rng=np.random.default_rng(4))
    assert np.array_equal(a.waypoints, b.waypoints) and a.cost == b.cost


def test_bitstar_failures():
    m = _empty_hall()
    cost = m.cost.copy()
    cost[:, 50] = LETHAL
    with pytest.raises(NoSolutionError):
        plan_bitstar(Pose2D(1, 1), Pose2D(9, 1), m.with_cost(cost), batches=2, samples_per_batch=50)
    with pytest.raises(NoSolutionError):
        plan_bitstar(Pose2D(5.05, 1), Pose2D(9, 1), m.with_cost(cost))


def test_path_length_property():
    assert Path(np.array([[0.0, 0.0], [3.0, 4.0]]), 0.0).length == 5.0
    assert Path(np.zeros((1, 2)), 0.0).length == 0.0
