import math

import numpy as np
import pytest

from gsonnav.nmpc import (
    NMPCParams,
    NMPCProblem,
    ObstacleSet,
    SolveStatus,
    barrier,
    brake,
    dynamics,
    relevant_obstacles,
    shift_warm_start,
    solve_nmpc,
)
from gsonnav.world import ControlInput, Pose2D, RobotState

from oracles import finite_difference


def test_dynamics_euler_step():
    x = dynamics(RobotState(Pose2D(1.0, 2.0, math.pi / 2)), ControlInput(0.5, 0.2), 0.1)
    assert (x.pose.x, x.pose.y, x.pose.theta) == pytest.approx((1.0, 2.05, math.pi / 2 + 0.02))
    with pytest.raises(ValueError):
        dynamics(x, ControlInput(0, 0), 0.0)


def test_constant_controls_trace_the_discrete_arc():
    # closed form of the Euler-discretised unicycle under constant (v, w)
    v, w, dt, n = 0.6, 0.5, 0.1, 40
    x = RobotState(Pose2D(0.0, 0.0, 0.3))
    for _ in range(n):
        x = dynamics(x, ControlInput(v, w), dt)
    k = np.arange(n)
    theta = 0.3 + w * dt * k
    assert x.pose.x == pytest.approx(v * dt * np.cos(theta).sum(), abs=1e-12)
    assert x.pose.y == pytest.approx(v * dt * np.sin(theta).sum(), abs=1e-12)
    # summed geometric series: the points lie on a circle of radius v dt / (2 sin(w dt / 2))
    r = v * dt / (2.0 * math.sin(w * dt / 2.0))
    c = np.array([-r * math.sin(0.3 - w * dt / 2.0), r * math.cos(0.3 - w * dt / 2.0)])
    assert np.hypot(x.pose.x - c[0], x.pose.y - c[1]) == pytest.approx(r, abs=1e-9)


def test_params_validation():
    with pytest.raises(ValueError):
        NMPCParams(horizon=0)
    with pytest.raises(ValueError):
        NMPCParams(cbf_rate=0.0)
    with pytest.raises(ValueError):
        NMPCParams(control_weight=(0.0, 1.0))
    with pytest.raises(ValueError):
        NMPCParams(terminal_weight=(1.0, 1.0))
    full = NMPCParams(terminal_weight=[[2.0, 0.5, 0.0], [0.5, 2.0, 0.0], [0.0, 0.0, 1.0]])
    assert full.P_f[0, 1] == 0.5


def _random_problem(rng, params):
    x0 = rng.uniform([-1, -1, -math.pi], [1, 1, math.pi])
    goal = rng.uniform([2, -2, -math.pi], [5, 2, math.pi])
    m = int(rng.integers(0, 4))
    obs = ObstacleSet(rng.uniform(-3, 3, size=(m, params.horizon + 1, 2)))
    return NMPCProblem(x0, goal, obs, params)


def test_gradients_match_central_differences():
    rng = np.random.default_rng(12)
    params = NMPCParams(horizon=8, terminal_weight=(10.0, 10.0, 0.0))
    for _ in range(100):
        prob = _random_problem(rng, params)
        z = np.concatenate([rng.uniform([-0.8, -1.0] * params.horizon, [0.8, 1.0] * params.horizon), rng.uniform(0, 1, prob.M)])
        g = prob.objective_grad(z)
        g_fd = finite_difference(prob.objective, z)
        assert np.linalg.norm(g - g_fd) <= 1e-4 * max(1.0, np.linalg.norm(g_fd))
        if prob.M:
            J = prob.constraints_jac(z)
            J_fd = finite_difference(prob.constraints, z)
            assert np.linalg.norm(J - J_fd) <= 1e-4 * max(1.0, np.linalg.norm(J_fd))


def test_stationary_goal_gives_zero_control():
    params = NMPCParams()
    x = RobotState(Pose2D(2.0, 3.0, 0.4))
    res = solve_nmpc(x, Pose2D(2.0, 3.0, 0.4), ObstacleSet.static(np.zeros((0, 2)), params.horizon), params)
    assert res.status == SolveStatus.OPTIMAL
    assert math.hypot(res.control.v, res.control.omega) <= 1e-3


def _horizon_holds(res, params) -> bool:
    h = res.barriers
    if h.size == 0:
        return True
    k = np.arange(h.shape[1])
    return bool((h >= (1.0 - params.cbf_rate) ** k * h[:, :1] - 1e-6).all())


def test_blocked_line_rollout_keeps_barrier_positive():
    params = NMPCParams()
    ped = np.array([[3.0, 0.05]])
    obstacles = ObstacleSet.static(ped, params.horizon)
    x = RobotState(Pose2D(0.0, 0.0, 0.0))
    goal = Pose2D(6.0, 0.0, 0.0)
    warm = None
    min_h = math.inf
    for _ in range(120):
        res = solve_nmpc(x, goal, obstacles, params, warm)
        assert res.status == SolveStatus.OPTIMAL
        assert _horizon_holds(res, params)
        warm = shift_warm_start(res.controls)
        x = dynamics(x, res.control, params.dt)
        min_h = min(min_h, barrier(x, ped[0], params.d_safe))
    assert min_h >= 0.0
    assert x.pose.x > 3.0  # it got past the pedestrian rather than stalling


def test_moving_obstacle_horizon_condition():
    params = NMPCParams()
    track_state = np.array([4.0, 0.0, -0.5, 0.0])

    class T:
        state = track_state
        track_id = 7

    obstacles = ObstacleSet.constant_velocity([T()], params.horizon, params.dt)
    assert np.allclose(obstacles.positions[0, -1], (4.0 - 0.5 * params.horizon * params.dt, 0.0))
    res = solve_nmpc(RobotState(Pose2D(0, 0, 0)), Pose2D(6, 0, 0), obstacles, params)
    assert res.status == SolveStatus.OPTIMAL and _horizon_holds(res, params)


def test_obstacle_filter_never_drops_a_binding_constraint():
    rng = np.random.default_rng(5)
    params = NMPCParams()
    for _ in range(30):
        pts = rng.uniform(-6, 6, size=(6, 2))
        pts = pts[np.linalg.norm(pts, axis=1) > 1.0]
        obstacles = ObstacleSet.static(pts, params.horizon)
        x = RobotState(Pose2D(0, 0, float(rng.uniform(-3, 3))))
        res = solve_nmpc(x, Pose2D(4, 1, 0), obstacles, params)
        kept = set(relevant_obstacles(x, obstacles, params).tolist())
        h = res.barriers
        lam = params.cbf_rate
        for i in range(len(pts)):
            if i not in kept:
                assert (h[i, 1:] - (1 - lam) * h[i, :-1] >= -1e-9).all()


def test_brake_and_warm_start_shift():
    params = NMPCParams()
    assert brake(RobotState(Pose2D(0, 0), v=0.5), params).v == pytest.approx(0.4)
    assert brake(RobotState(Pose2D(0, 0), v=0.05), params).v == 0.0
    u = np.arange(6.0).reshape(3, 2)
    assert shift_warm_start(u).tolist() == [[2, 3], [4, 5], [4, 5]]
