"""NMPC local planner with discrete-time control barrier constraints.

Decision variables are the controls over the horizon plus one non-negative
slack per pedestrian; states are eliminated by forward simulation of the
unicycle model, with exact first-order sensitivities for the gradients.
The barrier for pedestrian ``i`` at step ``k`` is

    h_i(x_k) = |p_k - p_i(k)|^2 - d_safe^2

and each step must satisfy h_i(x_{k+1}) - h_i(x_k) + lambda * h_i(x_k) + s_i >= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import Bounds, minimize

from .world import ControlInput, Pose2D, RobotState, wrap_angle


@dataclass(frozen=True)
class NMPCParams:
    horizon: int = 20
    dt: float = 0.1
    terminal_weight: tuple[float, ...] = (10.0, 10.0, 1.0)
    control_weight: tuple[float, ...] = (0.5, 0.1)
    cbf_rate: float = 0.2
    d_safe: float = 0.6
    v_max: float = 0.8
    v_min: float = 0.0
    omega_max: float = 1.0
    slack_weight: float = 1e4
    max_iter: int = 50
    tol: float = 1e-4
    max_decel: float = 1.0
    carrot_distance: float = 1.5

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 < self.cbf_rate <= 1.0:
            raise ValueError("cbf_rate must lie in (0, 1]")
        if self.d_safe <= 0 or self.dt <= 0:
            raise ValueError("d_safe and dt must be positive")
        if np.any(np.linalg.eigvalsh(self.P_f) < -1e-12):
            raise ValueError("terminal weight must be positive semidefinite")
        if np.any(np.linalg.eigvalsh(self.Q_u) <= 0):
            raise ValueError("control weight must be positive definite")

    @staticmethod
    def _matrix(w, n: int) -> np.ndarray:
        m = np.asarray(w, dtype=float)
        if m.shape == (n,):
            return np.diag(m)
        if m.shape == (n, n):
            return 0.5 * (m + m.T)
        raise ValueError(f"weight must be a length-{n} diagonal or an {n}x{n} matrix")

    @property
    def P_f(self) -> np.ndarray:
        return self._matrix(self.terminal_weight, 3)

    @property
    def Q_u(self) -> np.ndarray:
        return self._matrix(self.control_weight, 2)


SLACK_SCALE = 100.0


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"


def dynamics(x: RobotState, u: ControlInput, dt: float) -> RobotState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    th = x.pose.theta
    return RobotState(
        Pose2D(x.pose.x + u.v * math.cos(th) * dt, x.pose.y + u.v * math.sin(th) * dt, th + u.omega * dt),
        u.v,
        u.omega,
    )


def barrier(x, ped, d_safe: float) -> float:
    px, py = (x.pose.x, x.pose.y) if isinstance(x, RobotState) else (x[0], x[1])
    return (px - ped[0]) ** 2 + (py - ped[1]) ** 2 - d_safe**2


@dataclass(frozen=True)
class ObstacleSet:
    """Predicted pedestrian positions, shape (M, N+1, 2); index 0 is the current position."""

    positions: np.ndarray
    ids: tuple[int, ...] = ()

    @classmethod
    def constant_velocity(cls, tracks, horizon: int, dt: float) -> "ObstacleSet":
        tracks = list(tracks)
        if not tracks:
            return cls(np.zeros((0, horizon + 1, 2)), ())
        steps = np.arange(horizon + 1)[None, :, None] * dt
        pos = np.array([t.state[:2] for t in tracks])[:, None, :]
        vel = np.array([t.state[2:] for t in tracks])[:, None, :]
        return cls(pos + vel * steps, tuple(t.track_id for t in tracks))

    @classmethod
    def static(cls, points, horizon: int) -> "ObstacleSet":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(np.repeat(pts[:, None, :], horizon + 1, axis=1), tuple(range(len(pts))))

    def __len__(self) -> int:
        return len(self.positions)


class NMPCProblem:
    """Condensed program over z = [u_0, ..., u_{N-1}, s_1, ..., s_M]."""

    def __init__(self, x_init, x_goal, obstacles: ObstacleSet, params: NMPCParams):
        self.p = params
        self.x0 = np.asarray(x_init, dtype=float)
        self.goal = np.asarray(x_goal, dtype=float)
        self.obs = obstacles.positions
        self.N = params.horizon
        self.M = len(obstacles)
        self.nz = 2 * self.N + self.M
        self.P_f = params.P_f
        self.Q_u = params.Q_u
        k = np.arange(self.N + 1)[:, None]
        j = np.arange(self.N)[None, :]
        self._after = (k > j).astype(float)
        self._key = None

    def _eval(self, z: np.ndarray) -> None:
        key = z.tobytes()
        if key == self._key:
            return
        N, dt = self.N, self.p.dt
        U = z[: 2 * N].reshape(N, 2)
        v, w = U[:, 0], U[:, 1]
        theta = self.x0[2] + dt * np.concatenate([[0.0], np.cumsum(w)])
        c, s = np.cos(theta[:-1]), np.sin(theta[:-1])
        X = np.empty((N + 1, 3))
        X[0] = self.x0
        X[1:, 0] = self.x0[0] + dt * np.cumsum(v * c)
        X[1:, 1] = self.x0[1] + dt * np.cumsum(v * s)
        X[:, 2] = theta

        # d x_k / d U, shape (N+1, 3, 2N); control j only moves states k > j
        after = self._after
        S = np.zeros((N + 1, 3, 2 * N))
        S[:, 0, 0::2] = after * (dt * c)[None, :]
        S[:, 1, 0::2] = after * (dt * s)[None, :]
        S[:, 2, 1::2] = after * dt
        # omega_j rotates every later velocity: sum_{j<i<k} dt v_i (-sin, cos) * dt
        cum = np.vstack([np.zeros((1, 2)), np.cumsum(np.column_stack([-v * s, v * c]) * dt, axis=0)])
        rot = (cum[:, None, :] - cum[None, 1:, :]) * dt  # (N+1, N, 2): C_k - C_{j+1}
        rot *= after[:, :, None]
        S[:, 0, 1::2] = rot[:, :, 0]
        S[:, 1, 1::2] = rot[:, :, 1]
        self.U, self.X, self.S = U, X, S
        self._key = key

    def terminal_error(self) -> np.ndarray:
        e = self.X[-1] - self.goal
        e[2] = wrap_angle(e[2])
        return e

    def objective(self, z: np.ndarray) -> float:
        self._eval(z)
        e = self.terminal_error()
        u_cost = np.einsum("ki,ij,kj->", self.U, self.Q_u, self.U)
        slack = z[2 * self.N :]
        return float(e @ self.P_f @ e + u_cost + self.p.slack_weight * slack.sum())

    def objective_grad(self, z: np.ndarray) -> np.ndarray:
        self._eval(z)
        e = self.terminal_error()
        grad = np.empty(self.nz)
        grad[: 2 * self.N] = 2.0 * (self.P_f @ e) @ self.S[-1]
        grad[: 2 * self.N] += (2.0 * self.U @ self.Q_u).ravel()
        grad[2 * self.N :] = self.p.slack_weight
        return grad

    def barriers(self, z: np.ndarray) -> np.ndarray:
        """h_i(x_k) for every obstacle and step, shape (M, N+1)."""
        self._eval(z)
        d = self.X[None, :, :2] - self.obs
        return (d**2).sum(axis=2) - self.p.d_safe**2

    def constraints(self, z: np.ndarray) -> np.ndarray:
        if self.M == 0:
            return np.zeros(0)
        h = self.barriers(z)
        slack = z[2 * self.N :]
        c = h[:, 1:] - (1.0 - self.p.cbf_rate) * h[:, :-1] + slack[:, None]
        return c.ravel()

    def constraints_jac(self, z: np.ndarray) -> np.ndarray:
        if self.M == 0:
            return np.zeros((0, self.nz))
        self._eval(z)
        d = self.X[None, :, :2] - self.obs  # (M, N+1, 2)
        G = 2.0 * np.einsum("mkj,kjn->mkn", d, self.S[:, :2, :])  # dh/dU, (M, N+1, 2N)
        J_u = G[:, 1:, :] - (1.0 - self.p.cbf_rate) * G[:, :-1, :]
        J = np.zeros((self.M, self.N, self.nz))
        J[:, :, : 2 * self.N] = J_u
        J[np.arange(self.M), :, 2 * self.N + np.arange(self.M)] = 1.0
        return J.reshape(self.M * self.N, self.nz)

    def bounds(self) -> list[tuple[float, float]]:
        p = self.p
        b = [(p.v_min, p.v_max), (-p.omega_max, p.omega_max)] * self.N
        return b + [(0.0, None)] * self.M


@dataclass
class NMPCResult:
    control: ControlInput
    controls: np.ndarray
    predicted: np.ndarray  # (N+1, 3)
    status: SolveStatus
    objective: float
    iterations: int
    min_barrier: float
    slack: np.ndarray = field(default_factory=lambda: np.zeros(0))
    barriers: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


def relevant_obstacles(x_init: RobotState, obstacles: ObstacleSet, params: NMPCParams) -> np.ndarray:
    """Indices of pedestrians whose barrier constraint could bind within the horizon.

    With closing speed bounded by ``delta`` per step, the constraint
    h(x_{k+1}) >= (1 - lambda) h(x_k) holds automatically whenever the
    distance stays above the larger root of
    lambda D^2 - 2 delta D + delta^2 - lambda d^2 = 0. Pedestrians that start
    farther than that root plus N * delta are left out of the program; their
    barrier sequence is still reported.
    """
    if len(obstacles) == 0:
        return np.zeros(0, dtype=np.int64)
    lam, d = params.cbf_rate, params.d_safe
    pos = obstacles.positions
    step = np.linalg.norm(np.diff(pos, axis=1), axis=2).max(axis=1) if pos.shape[1] > 1 else np.zeros(len(pos))
    delta = max(abs(params.v_min), abs(params.v_max)) * params.dt + step
    d_star = (delta + np.sqrt((1.0 - lam) * delta**2 + lam**2 * d**2)) / lam
    reach = d_star + params.horizon * delta + 1e-6
    dist = np.linalg.norm(pos[:, 0, :] - np.array([x_init.pose.x, x_init.pose.y]), axis=1)
    return np.flatnonzero(dist <= reach)


def solve_nmpc(
    x_init: RobotState,
    x_goal: Pose2D,
    obstacles: ObstacleSet,
    params: NMPCParams,
    warm_start: np.ndarray | None = None,
) -> NMPCResult:
    """Solve the receding-horizon program with SLSQP.

    ``warm_start`` is an (N, 2) control sequence, typically the previous
    solution shifted by one step. Status is OPTIMAL on convergence with all
    slacks at zero, MAX_ITERATIONS when the iteration cap is hit with the hard
    barrier constraints satisfied, and INFEASIBLE otherwise.
    """
    N = params.horizon
    active = relevant_obstacles(x_init, obstacles, params)
    subset = ObstacleSet(obstacles.positions[active], tuple(obstacles.ids[i] for i in active) if obstacles.ids else ())
    prob = NMPCProblem(x_init.as_array(), [x_goal.x, x_goal.y, x_goal.theta], subset, params)
    z0 = np.zeros(prob.nz)
    if warm_start is not None:
        z0[: 2 * N] = np.asarray(warm_start, dtype=float).reshape(-1)[: 2 * N]
    lo = np.array([b[0] for b in prob.bounds()], dtype=float)
    hi = np.array([np.inf if b[1] is None else b[1] for b in prob.bounds()], dtype=float)
    z0 = np.clip(z0, lo, hi)
    if prob.M:
        # start slacks just large enough that the initial guess is feasible
        viol = -prob.constraints(z0).reshape(prob.M, N)
        z0[2 * N :] = np.maximum(viol.max(axis=1), 0.0)
    # SLSQP stalls when the slack penalty dwarfs the other gradients; optimise
    # over rescaled slacks y = s * SLACK_SCALE instead
    D = np.ones(prob.nz)
    D[2 * N :] = 1.0 / SLACK_SCALE
    cons = []
    if prob.M:
        cons.append(
            {
                "type": "ineq",
                "fun": lambda y: prob.constraints(D * y),
                "jac": lambda y: prob.constraints_jac(D * y) * D,
            }
        )
    res = minimize(
        lambda y: prob.objective(D * y),
        z0 / D,
        jac=lambda y: prob.objective_grad(D * y) * D,
        bounds=Bounds(lo / D, hi / D),
        constraints=cons,
        method="SLSQP",
        options={"maxiter": params.max_iter, "ftol": params.tol**2},
    )
    z = np.clip(D * res.x, lo, hi)
    slack = np.zeros(len(obstacles))
    slack[active] = z[2 * N :]
    hard = prob.constraints(z) - np.repeat(z[2 * N :], N) if prob.M else np.zeros(0)
    hard_ok = bool((hard >= -1e-6).all())
    if res.success and hard_ok:
        status = SolveStatus.OPTIMAL
    elif res.status == 9 and hard_ok:
        status = SolveStatus.MAX_ITERATIONS
    elif hard_ok:
        # stalled line search at a feasible point; usable but not certified optimal
        status = SolveStatus.MAX_ITERATIONS
    else:
        status = SolveStatus.INFEASIBLE
    prob._eval(z)
    h = ((prob.X[None, :, :2] - obstacles.positions) ** 2).sum(axis=2) - params.d_safe**2
    U = z[: 2 * N].reshape(N, 2).copy()
    return NMPCResult(
        ControlInput(float(U[0, 0]), float(U[0, 1])),
        U,
        prob.X.copy(),
        status,
        float(prob.objective(z)),
        int(res.nit),
        float(h.min()) if h.size else math.inf,
        slack.copy(),
        h,
    )


def horizon_cbf_margin(barriers: np.ndarray, cbf_rate: float) -> float:
    """min over i, k of h_i(x_k) - (1 - lambda)^k h_i(x_0); non-negative when the
    returned horizon decays no faster than the barrier condition allows."""
    if barriers.size == 0:
        return math.inf
    decay = (1.0 - cbf_rate) ** np.arange(barriers.shape[1])
    return float((barriers - decay[None, :] * barriers[:, :1]).min())


def shift_warm_start(controls: np.ndarray) -> np.ndarray:
    return np.vstack([controls[1:], controls[-1:]])


def brake(state: RobotState, params: NMPCParams) -> ControlInput:
    return ControlInput(max(0.0, state.v - params.max_decel * params.dt), 0.0)
