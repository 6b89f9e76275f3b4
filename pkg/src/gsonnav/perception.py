"""Simulated pedestrian detections, Kalman/Hungarian tracking and keyframe gating."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .world import PedestrianState, RobotState, wrap_angle


@dataclass(frozen=True)
class SensorConfig:
    range: float = 10.0
    fov_deg: float = 360.0
    noise_std: float = 0.05
    dropout: float = 0.05


@dataclass(frozen=True)
class TrackerConfig:
    gate: float = 1.0
    accel_std: float = 0.5
    confirm_hits: int = 2
    max_misses: int = 10
    init_velocity_std: float = 1.0


@dataclass(frozen=True)
class Detection:
    position: np.ndarray
    timestamp: float
    # simulator-side label, never shown to estimators; lets the oracle map tracks to people
    truth_id: int | None = None


@dataclass(frozen=True)
class Track:
    track_id: int
    state: np.ndarray  # [x, y, vx, vy]
    covariance: np.ndarray
    last_update: float
    misses: int = 0
    hits: int = 1
    confirmed: bool = False
    truth_id: int | None = None

    @property
    def position(self) -> np.ndarray:
        return self.state[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.state[2:]


def transition(dt: float) -> np.ndarray:
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    return F


def process_noise(dt: float, accel_std: float) -> np.ndarray:
    """White-acceleration noise for a constant-velocity model."""
    q = accel_std**2
    block = q * np.array([[dt**4 / 4.0, dt**3 / 2.0], [dt**3 / 2.0, dt**2]])
    Q = np.zeros((4, 4))
    Q[np.ix_([0, 2], [0, 2])] = block
    Q[np.ix_([1, 3], [1, 3])] = block
    return Q


def kalman_predict(track: Track, dt: float, accel_std: float = 0.5) -> Track:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    F = transition(dt)
    P = F @ track.covariance @ F.T + process_noise(dt, accel_std)
    return replace(track, state=F @ track.state, covariance=0.5 * (P + P.T))


_H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


def kalman_update(track: Track, det: Detection, noise_std: float = 0.05) -> Track:
    z = np.asarray(det.position, dtype=float)
    if z.shape != (2,) or not np.all(np.isfinite(z)):
        raise ValueError(f"rejecting non-finite detection {det.position!r}")
    if det.timestamp < track.last_update:
        raise ValueError("detection older than the track's last update")
    R = noise_std**2 * np.eye(2)
    P = track.covariance
    S = _H @ P @ _H.T + R
    K = np.linalg.solve(S, _H @ P).T
    x = track.state + K @ (z - _H @ track.state)
    I_KH = np.eye(4) - K @ _H
    P_post = I_KH @ P @ I_KH.T + K @ R @ K.T  # Joseph form keeps P symmetric positive-definite
    return replace(
        track,
        state=x,
        covariance=0.5 * (P_post + P_post.T),
        last_update=det.timestamp,
        truth_id=det.truth_id if det.truth_id is not None else track.truth_id,
    )


@dataclass(frozen=True)
class Assignment:
    pairs: list[tuple[int, int]]
    unmatched_tracks: list[int]
    unmatched_detections: list[int]


def associate(track_positions, detection_positions, gate: float) -> Assignment:
    """Gated one-to-one assignment minimising total Euclidean distance.

    Pairs farther apart than ``gate`` are forbidden; among the remaining pairs the
    assignment matches as many as possible at minimum total cost.
    """
    if gate <= 0:
        raise ValueError("gate must be positive")
    T = np.asarray(track_positions, dtype=float).reshape(-1, 2)
    D = np.asarray(detection_positions, dtype=float).reshape(-1, 2)
    if len(T) == 0 or len(D) == 0:
        return Assignment([], list(range(len(T))), list(range(len(D))))
    cost = np.linalg.norm(T[:, None, :] - D[None, :, :], axis=2)
    return associate_costs(cost, gate)


def associate_costs(cost: np.ndarray, gate: float = math.inf) -> Assignment:
    cost = np.asarray(cost, dtype=float)
    n_t, n_d = cost.shape
    allowed = cost <= gate
    # a forbidden pair costs more than any complete set of allowed pairs
    big = (cost[allowed].sum() if allowed.any() else 0.0) + 1.0
    rows, cols = linear_sum_assignment(np.where(allowed, cost, big))
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if allowed[r, c]]
    matched_t = {r for r, _ in pairs}
    matched_d = {c for _, c in pairs}
    return Assignment(
        pairs,
        [t for t in range(n_t) if t not in matched_t],
        [d for d in range(n_d) if d not in matched_d],
    )


class Tracker:
    """Stateful multi-pedestrian tracker, updated strictly in timestamp order."""

    def __init__(self, config: TrackerConfig | None = None, noise_std: float = 0.05):
        self.config = config or TrackerConfig()
        self.noise_std = noise_std
        self.tracks: list[Track] = []
        self.time: float | None = None
        self._next_id = 1

    def _spawn(self, det: Detection) -> Track:
        P = np.diag([self.noise_std**2] * 2 + [self.config.init_velocity_std**2] * 2)
        track = Track(
            self._next_id,
            np.array([det.position[0], det.position[1], 0.0, 0.0]),
            P,
            det.timestamp,
            hits=1,
            confirmed=self.config.confirm_hits <= 1,
            truth_id=det.truth_id,
        )
        self._next_id += 1
        return track

    def step(self, detections: list[Detection], now: float) -> list[Track]:
        if self.time is not None and now < self.time:
            raise ValueError("tracker updates must arrive in timestamp order")
        dt = 0.0 if self.time is None else now - self.time
        self.time = now
        predicted = [kalman_predict(t, dt, self.config.accel_std) for t in self.tracks]
        result = associate(
            [t.position for t in predicted],
            [d.position for d in detections],
            self.config.gate,
        )
        updated: list[Track] = []
        for ti, di in result.pairs:
            t = kalman_update(predicted[ti], detections[di], self.noise_std)
            hits = t.hits + 1
            updated.append(
                replace(t, misses=0, hits=hits, confirmed=t.confirmed or hits >= self.config.confirm_hits)
            )
        for ti in result.unmatched_tracks:
            t = predicted[ti]
            # tentative tracks need consecutive hits; one miss kills them
            if not t.confirmed:
                continue
            if t.misses + 1 > self.config.max_misses:
                continue
            updated.append(replace(t, misses=t.misses + 1))
        for di in result.unmatched_detections:
            updated.append(self._spawn(detections[di]))
        self.tracks = sorted(updated, key=lambda t: t.track_id)
        return self.confirmed()

    def confirmed(self) -> list[Track]:
        return [t for t in self.tracks if t.confirmed]


def detect(
    robot: RobotState,
    pedestrians: list[PedestrianState],
    now: float,
    config: SensorConfig,
    rng: np.random.Generator,
) -> list[Detection]:
    """Noisy, lossy detections of pedestrians in range and field of view.

    Draws a fixed number of variates per pedestrian so the random stream does
    not depend on who happens to be visible.
    """
    dets = []
    origin = np.array([robot.pose.x, robot.pose.y])
    for ped in pedestrians:
        noise = rng.normal(0.0, config.noise_std, size=2)
        drop = rng.random() < config.dropout
        rel = ped.position - origin
        if np.hypot(*rel) > config.range or drop:
            continue
        if config.fov_deg < 360.0:
            bearing = wrap_angle(math.atan2(rel[1], rel[0]) - robot.pose.theta)
            if abs(bearing) > math.radians(config.fov_deg) / 2.0:
                continue
        dets.append(Detection(ped.position + noise, now, ped.id))
    return dets


@dataclass(frozen=True)
class TrackSnapshot:
    timestamp: float
    positions: dict[int, tuple[float, float]] = field(default_factory=dict)
    velocities: dict[int, tuple[float, float]] = field(default_factory=dict)

    @classmethod
    def from_tracks(cls, tracks: list[Track], timestamp: float) -> "TrackSnapshot":
        return cls(
            timestamp,
            {t.track_id: (float(t.state[0]), float(t.state[1])) for t in tracks},
            {t.track_id: (float(t.state[2]), float(t.state[3])) for t in tracks},
        )

    @property
    def count(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class Keyframe:
    timestamp: float
    ids: tuple[int, ...]
    positions: dict[int, tuple[float, float]]
    velocities: dict[int, tuple[float, float]]


# tick times are multiples of dt; absorb their round-off at the window edge
_TIME_EPS = 1e-9


def best_frame(frames) -> TrackSnapshot | None:
    """Frame with the most people; ties go to the newest. ``None`` if nobody is visible."""
    best = None
    for f in frames:
        if best is None or f.count >= best.count:
            best = f
    if best is None or best.count == 0:
        return None
    return best


def update_keyframe(buffer: list[TrackSnapshot], now: float, current: Keyframe | None, window: float = 3.0):
    """Pick the keyframe for the trailing window; returns ``(keyframe, changed)``."""
    frames = [f for f in buffer if now - window - _TIME_EPS <= f.timestamp <= now + _TIME_EPS]
    best = best_frame(frames)
    if best is None:
        return None, False
    if current is not None and current.timestamp == best.timestamp:
        return current, False
    kf = Keyframe(best.timestamp, tuple(sorted(best.positions)), dict(best.positions), dict(best.velocities))
    return kf, True


class KeyframeSelector:
    """Keeps the trailing window and reports when the keyframe changes.

    ``push`` returns the new Keyframe exactly when the window's best frame
    changes, which is when the group estimator should be queried.
    """

    def __init__(self, window: float = 3.0):
        self.window = window
        self.buffer: deque[TrackSnapshot] = deque()
        self.current: Keyframe | None = None

    def push(self, snapshot: TrackSnapshot) -> Keyframe | None:
        self.buffer.append(snapshot)
        now = snapshot.timestamp
        while self.buffer and self.buffer[0].timestamp < now - self.window - _TIME_EPS:
            self.buffer.popleft()
        kf, changed = update_keyframe(list(self.buffer), now, self.current, self.window)
        self.current = kf
        return kf if changed else None
