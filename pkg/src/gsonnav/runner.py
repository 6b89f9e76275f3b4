"""Episode orchestration in simulated (lockstep) time.

Each tick: crowd step, detection, tracking, keyframe check (and an estimator
query on change), mid-level cycle, NMPC solve, control applied. Estimates
become visible at the following tick boundary. Episodes end at the goal or
at the time limit, and the log is a sequence of JSON lines that depends only
on the scenario, the seed, the estimator and the planner stack.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .config import ConfigError, ScenarioConfig, from_dict, load_scenario, to_dict
from .crowd import CrowdSimulator
from .estimation import (
    AnnotationPayload,
    EstimateChannel,
    MockEstimator,
    OracleEstimator,
    RemoteConfig,
    RemoteEstimator,
    load_instruction,
)
from .global_planner import Path, plan_global
from .metrics import GOAL_TOLERANCE, EpisodeRecord, MetricReport, evaluate, write_aggregate, write_reports
from .midlevel import Flag, MidLevelOutput, MidLevelPlanner, PlanningError, nearest_index
from .nmpc import (
    ControlInput,
    ObstacleSet,
    SolveStatus,
    brake,
    dynamics,
    horizon_cbf_margin,
    shift_warm_start,
    solve_nmpc,
)
from .perception import KeyframeSelector, Tracker, TrackSnapshot, detect
from .scenarios import build_scenario, resolve_map
from .world import LETHAL, PedestrianState, Pose2D, RobotState, inflate

log = logging.getLogger(__name__)

ESTIMATORS = ("oracle", "mock", "remote")
STACKS = ("gson", "baseline")
LOG_VERSION = 1
RECOVERY_SPEED = 0.2


@dataclass
class EpisodeLog:
    header: dict
    ticks: list[dict]
    report: MetricReport
    record: EpisodeRecord = field(repr=False, default=None)

    def lines(self) -> list[str]:
        out = [json.dumps({"header": self.header}, sort_keys=True)]
        out.extend(json.dumps(t, sort_keys=True) for t in self.ticks)
        out.append(json.dumps({"metrics": self.report.row()}, sort_keys=True))
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()

    def write(self, path) -> FsPath:
        path = FsPath(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.text())
        return path

    def flags(self) -> list[str]:
        return [t["midlevel"]["flag"] for t in self.ticks if t.get("midlevel")]


def read_log(path) -> tuple[dict, list[dict], dict]:
    lines = FsPath(path).read_text().splitlines()
    objs = [json.loads(line) for line in lines if line.strip()]
    if not objs or "header" not in objs[0]:
        raise ValueError(f"{path} is not an episode log")
    metrics = objs[-1].get("metrics", {}) if len(objs) > 1 else {}
    ticks = objs[1:-1] if metrics else objs[1:]
    return objs[0]["header"], ticks, metrics


def lookahead(points: np.ndarray, robot_xy, distance: float, final_heading: float | None = None) -> Pose2D:
    """Carrot pose ``distance`` metres of arc ahead of the robot's nearest point on ``points``.

    The heading follows the path; at the path end it is ``final_heading`` when given.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) == 1:
        return Pose2D(float(pts[0, 0]), float(pts[0, 1]), final_heading or 0.0)
    k = nearest_index(pts, robot_xy, 0, window=40)
    remaining = distance
    while k < len(pts) - 1:
        seg = pts[k + 1] - pts[k]
        length = float(np.hypot(*seg))
        if length >= remaining and length > 0:
            p = pts[k] + seg * (remaining / length)
            return Pose2D(float(p[0]), float(p[1]), math.atan2(seg[1], seg[0]))
        remaining -= length
        k += 1
    seg = pts[-1] - pts[-2]
    heading = final_heading if final_heading is not None else math.atan2(seg[1], seg[0])
    return Pose2D(float(pts[-1, 0]), float(pts[-1, 1]), heading)


def governor(state: RobotState, u: ControlInput, costmap, dt: float) -> ControlInput:
    """Stop rather than step onto a cell the footprint cannot occupy."""
    nxt = dynamics(state, u, dt)
    if u.v > 0 and costmap.cost_at((nxt.pose.x, nxt.pose.y)) >= LETHAL:
        return ControlInput(0.0, u.omega)
    return u


def _carrot_path(out: MidLevelOutput, reference: Path) -> np.ndarray:
    """Active path, continued along the reference past the end of a seclusion path."""
    pts = out.path.waypoints
    if out.flag == Flag.REPLANNED and len(pts):
        j = nearest_index(reference.waypoints, pts[-1])
        pts = np.vstack([pts, reference.waypoints[j + 1 :]])
    return pts


def _round(v, nd: int = 6):
    return float(round(float(v), nd))


def _make_estimator(kind: str, crowd: CrowdSimulator, tracker: Tracker, config: ScenarioConfig, rng, remote_client):
    def truth():
        ids = {t.track_id: t.truth_id for t in tracker.tracks if t.truth_id is not None}
        return crowd.ground_truth_groups(), ids

    if kind == "oracle":
        return OracleEstimator(truth), False
    if kind == "mock":
        return MockEstimator(truth, config.mock, rng), False
    if kind == "remote":
        return RemoteEstimator(RemoteConfig.from_env(), remote_client), True
    raise ConfigError(f"unknown estimator {kind!r}")


def run_episode(
    config: ScenarioConfig,
    estimator: str = "oracle",
    stack: str = "gson",
    map_dir=None,
    remote_client=None,
) -> EpisodeLog:
    if stack not in STACKS:
        raise ConfigError(f"unknown planner stack {stack!r}")
    if estimator not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {estimator!r}")
    base = resolve_map(config.map, map_dir)
    costmap = inflate(base, config.robot_radius, config.inflation_radius)
    start, goal = config.start_pose, config.goal_pose
    reference = plan_global(start, goal, costmap)

    seeds = np.random.SeedSequence(config.seed).spawn(4)
    rng_sensor, rng_crowd, rng_est, rng_plan = (np.random.default_rng(s) for s in seeds)
    peds = [PedestrianState(p.id, np.array(p.position, dtype=float), np.zeros(2), p.heading) for p in config.pedestrians]
    crowd = CrowdSimulator(peds, list(config.groups), config.crowd, rng_crowd)
    tracker = Tracker(config.tracker, config.sensor.noise_std)
    selector = KeyframeSelector(config.keyframe_window)
    est, asynchronous = _make_estimator(estimator, crowd, tracker, config, rng_est, remote_client)
    channel = EstimateChannel(est, asynchronous=asynchronous)
    instruction = load_instruction()
    planner = MidLevelPlanner(reference, costmap, config.midlevel, rng_plan, enabled=(stack == "gson"))
    params = config.nmpc

    header = {
        "version": LOG_VERSION,
        "scenario": to_dict(config),
        "estimator": estimator,
        "stack": stack,
        "reference": [[_round(x), _round(y)] for x, y in reference.waypoints],
    }
    state = RobotState(start)
    warm = None
    last_out: MidLevelOutput | None = None
    ticks: list[dict] = []
    robot_rows, ped_pos, ped_head, group_pts = [], [], [], []
    n_ticks = int(math.floor(config.time_limit / config.dt + 1e-9))
    try:
        for k in range(n_ticks + 1):
            t = k * config.dt
            if k > 0:
                crowd.step(config.dt, (state.pose.x, state.pose.y))
            truth = crowd.snapshot()
            by_id = {p.id: p for p in truth}
            robot_rows.append(state.as_array())
            ped_pos.append(np.array([p.position for p in truth]).reshape(-1, 2))
            ped_head.append(np.array([p.heading for p in truth]))
            group_pts.append(
                [np.array([by_id[m].position for m in sorted(g.member_ids) if m in by_id]).reshape(-1, 2)
                 for g in crowd.ground_truth_groups()]
            )
            row: dict = {"t": _round(t), "robot": [_round(v) for v in (*state.as_array(), state.v, state.omega)]}
            if math.hypot(state.pose.x - goal.x, state.pose.y - goal.y) <= GOAL_TOLERANCE:
                row["event"] = "goal"
                ticks.append(row)
                break
            if k == n_ticks:
                row["event"] = "timeout"
                ticks.append(row)
                break

            # estimates issued on earlier ticks become visible at this boundary
            estimate = channel.poll()
            dets = detect(state, truth, t, config.sensor, rng_sensor)
            tracks = tracker.step(dets, t)
            keyframe = selector.push(TrackSnapshot.from_tracks(tracks, t))
            if keyframe is not None:
                channel.submit(AnnotationPayload.from_keyframe(keyframe, instruction))
            row["tracks"] = [[tr.track_id, *(_round(v) for v in tr.state)] for tr in tracks]
            row["query"] = keyframe is not None
            if estimate is not None:
                row["estimate"] = {
                    "issued_at": _round(estimate.issued_at),
                    "groups": [sorted(g.member_ids) for g in estimate.groups],
                }

            hold = False
            try:
                out = planner.cycle(estimate, tracks, state)
                last_out = out
            except PlanningError as exc:
                row["planning_error"] = str(exc)
                hold = last_out is None
                out = last_out
            if out is not None:
                row["midlevel"] = {
                    "flag": out.flag.value,
                    "conflict_cells": out.conflict_cells,
                    "x_goal": None if out.x_goal is None else [_round(out.x_goal.x), _round(out.x_goal.y), _round(out.x_goal.theta)],
                    "path_cost": _round(out.path.cost),
                    "planned": out.planned,
                }

            obstacles = ObstacleSet.constant_velocity(tracks, params.horizon, params.dt)
            if hold or out is None or len(out.path) == 0:
                u = brake(state, params)
                row["status"] = "hold"
                warm = None
            else:
                carrot = lookahead(_carrot_path(out, reference), (state.pose.x, state.pose.y), params.carrot_distance, goal.theta)
                res = solve_nmpc(state, carrot, obstacles, params, warm)
                margin = horizon_cbf_margin(res.barriers, params.cbf_rate)
                row.update(
                    status=res.status.value,
                    iterations=res.iterations,
                    objective=_round(res.objective),
                    min_h=_round(res.min_barrier) if math.isfinite(res.min_barrier) else None,
                    cbf_margin=_round(margin, 9) if math.isfinite(margin) else None,
                    carrot=[_round(carrot.x), _round(carrot.y), _round(carrot.theta)],
                )
                if res.status == SolveStatus.INFEASIBLE:
                    h0 = res.barriers[:, 0] if res.barriers.size else np.zeros(0)
                    if h0.size and h0.min() < 0:
                        u = ControlInput(min(res.control.v, RECOVERY_SPEED), res.control.omega)
                    else:
                        u = brake(state, params)
                    warm = None
                else:
                    u = res.control
                    warm = shift_warm_start(res.controls)
            u = governor(state, u, costmap, config.dt)
            row["control"] = [_round(u.v), _round(u.omega)]
            ticks.append(row)
            state = dynamics(state, u, config.dt)
    finally:
        channel.close()

    record = EpisodeRecord(
        config.dt,
        np.array(robot_rows),
        ped_pos,
        ped_head,
        group_pts,
        reference.waypoints,
        (goal.x, goal.y),
        config.robot_radius,
    )
    report = evaluate(record)
    return EpisodeLog(header, ticks, report, record)


@dataclass(frozen=True)
class EpisodeSpec:
    config: ScenarioConfig
    estimator: str = "oracle"
    stack: str = "gson"
    map_dir: str | None = None


@dataclass
class BatchResult:
    rows: list[dict]
    aggregate: list[dict]
    failures: list[dict]
    digests: dict[str, str] = field(default_factory=dict)


BATCH_KEYS = ["scenario", "archetype", "seed", "estimator", "stack", "status"]


def run_batch(specs: list[EpisodeSpec], out_dir=None, write_logs: bool = True) -> BatchResult:
    """Run every episode; failures are recorded and the batch carries on."""
    if not specs:
        raise ValueError("batch needs at least one episode")
    rows, failures, digests = [], [], {}
    out = FsPath(out_dir) if out_dir is not None else None
    for spec in specs:
        c = spec.config
        name = f"{c.name}__{spec.stack}__{spec.estimator}__s{c.seed}"
        meta = {"scenario": c.name, "archetype": c.archetype, "seed": c.seed, "estimator": spec.estimator, "stack": spec.stack}
        t0 = time.perf_counter()
        try:
            ep = run_episode(c, spec.estimator, spec.stack, spec.map_dir)
        except Exception as exc:  # one bad episode must not sink the batch
            log.error("episode %s failed: %s", name, exc)
            failures.append({**meta, "error": f"{type(exc).__name__}: {exc}"})
            rows.append({**meta, "status": "crashed"})
            continue
        log.info("episode %s done in %.2fs", name, time.perf_counter() - t0)
        digests[name] = ep.digest()
        if out is not None and write_logs:
            ep.write(out / "logs" / f"{name}.jsonl")
        rows.append({**meta, "status": "ok", **ep.report.row()})
    ok_rows = [r for r in rows if r["status"] == "ok"]
    for r in ok_rows:
        r["group"] = f"{r['archetype']}/{r['stack']}/{r['estimator']}"
    from .metrics import aggregate

    agg = aggregate(ok_rows, key="group") if ok_rows else []
    if out is not None:
        write_reports(out / "episodes.csv", rows, BATCH_KEYS)
        if ok_rows:
            write_aggregate(out / "aggregate.csv", ok_rows, key="group")
        (out / "digests.json").write_text(json.dumps(digests, indent=2, sort_keys=True) + "\n")
        if failures:
            (out / "failures.json").write_text(json.dumps(failures, indent=2) + "\n")
    return BatchResult(rows, agg, failures, digests)


@dataclass(frozen=True)
class Manifest:
    """Batch description: scenario files and/or generated archetypes crossed with seeds and stacks."""

    scenarios: tuple[str, ...] = ()
    archetypes: tuple[str, ...] = ()
    seeds: tuple[int, ...] = (0,)
    estimator: str = "oracle"
    stacks: tuple[str, ...] = ("gson",)
    out: str = "runs/batch"


def load_manifest(path) -> tuple[Manifest, FsPath]:
    path = FsPath(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    return from_dict(Manifest, data, path.name), path.parent


def manifest_specs(manifest: Manifest, base_dir) -> list[EpisodeSpec]:
    base_dir = FsPath(base_dir)
    specs = []
    for stack in manifest.stacks:
        for ref in manifest.scenarios:
            p = base_dir / ref
            cfg = load_scenario(p)
            for seed in manifest.seeds:
                specs.append(EpisodeSpec(cfg.with_seed(seed), manifest.estimator, stack))
        for arch in manifest.archetypes:
            for seed in manifest.seeds:
                specs.append(EpisodeSpec(build_scenario(arch, seed), manifest.estimator, stack))
    return specs


def replay(path) -> tuple[bool, str]:
    """Re-run the episode described by a log header and compare line by line."""
    header, ticks, metrics = read_log(path)
    config = from_dict(ScenarioConfig, header["scenario"], "header.scenario")
    if header["estimator"] == "remote":
        return False, "remote-estimator episodes are not replayable"
    ep = run_episode(config, header["estimator"], header["stack"])
    original = FsPath(path).read_text().splitlines()
    fresh = ep.lines()
    for i, (a, b) in enumerate(zip(original, fresh)):
        if a != b:
            return False, f"first difference at line {i + 1}"
    if len(original) != len(fresh):
        return False, f"line count differs: {len(original)} vs {len(fresh)}"
    return True, f"{len(fresh)} lines identical"
