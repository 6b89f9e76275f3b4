"""Social-group estimators behind one interface: ground-truth oracle, stochastic mock, remote model."""

from __future__ import annotations

import json
import logging
import math
import os
import re
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Callable, Protocol

import numpy as np

from .perception import Keyframe
from .world import Activity, SocialGroup

log = logging.getLogger(__name__)

PROMPT_ASSET = "group_prompt_v1.txt"


def load_instruction(name: str = PROMPT_ASSET) -> str:
    return (resources.files("gsonnav") / "assets" / name).read_text(encoding="utf-8")


class EstimateSource(str, Enum):
    ORACLE = "oracle"
    MOCK = "mock"
    REMOTE = "remote"


class MockCategory(str, Enum):
    ACCURATE = "accurate"
    MISS = "miss"
    EXTRA = "extra"
    ERROR = "error"


@dataclass(frozen=True)
class TrackEntry:
    track_id: int
    position: tuple[float, float]
    velocity: tuple[float, float]


@dataclass(frozen=True)
class AnnotationPayload:
    timestamp: float
    entries: tuple[TrackEntry, ...]
    instruction: str = ""

    @property
    def ids(self) -> set[int]:
        return {e.track_id for e in self.entries}

    @classmethod
    def from_keyframe(cls, kf: Keyframe, instruction: str = "") -> "AnnotationPayload":
        entries = tuple(TrackEntry(i, kf.positions[i], kf.velocities[i]) for i in kf.ids)
        return cls(kf.timestamp, entries, instruction)

    def to_json(self) -> str:
        return json.dumps(
            {
                "timestamp": round(self.timestamp, 3),
                "people": [
                    {
                        "id": e.track_id,
                        "position": [round(e.position[0], 2), round(e.position[1], 2)],
                        "velocity": [round(e.velocity[0], 2), round(e.velocity[1], 2)],
                    }
                    for e in self.entries
                ],
            }
        )


@dataclass(frozen=True)
class GroupEstimate:
    groups: tuple[SocialGroup, ...]
    source: EstimateSource
    issued_at: float
    categories: tuple[MockCategory, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        seen: set[int] = set()
        for g in self.groups:
            if seen & g.member_ids:
                raise ValueError("group estimate has overlapping groups")
            seen |= g.member_ids


@dataclass(frozen=True)
class MockErrorModel:
    p_accurate: float = 0.73
    p_miss: float = 0.09
    p_extra: float = 0.09
    p_error: float = 0.09

    def __post_init__(self):
        probs = self.probabilities
        if any(p < 0 or p > 1 for p in probs):
            raise ValueError(f"probabilities must lie in [0, 1]: {probs}")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1, got {sum(probs)}")

    @property
    def probabilities(self) -> tuple[float, float, float, float]:
        return (self.p_accurate, self.p_miss, self.p_extra, self.p_error)


def estimate_oracle(
    payload: AnnotationPayload,
    truth: list[SocialGroup],
    id_map: dict[int, int] | None = None,
) -> GroupEstimate:
    """Ground-truth grouping restricted to the tracks in ``payload``.

    ``id_map`` maps track id to pedestrian id; identity when omitted.
    """
    if id_map is None:
        id_map = {i: i for i in payload.ids}
    ped_to_track: dict[int, int] = {}
    for tid in sorted(payload.ids):
        pid = id_map.get(tid)
        if pid is not None and pid not in ped_to_track:
            ped_to_track[pid] = tid
    groups = []
    for g in truth:
        members = {ped_to_track[p] for p in g.member_ids if p in ped_to_track}
        if members:
            groups.append(SocialGroup(g.group_id, frozenset(members), g.activity))
    return GroupEstimate(tuple(groups), EstimateSource.ORACLE, payload.timestamp)


def estimate_mock(
    payload: AnnotationPayload,
    truth: list[SocialGroup],
    model: MockErrorModel,
    rng: np.random.Generator,
    id_map: dict[int, int] | None = None,
) -> GroupEstimate:
    """Perturb the oracle grouping with one sampled error category per group.

    Miss drops a random member, Extra pulls in a random visible non-member
    (taking it from its previous group), Error splits the group at a random cut.
    """
    exact = estimate_oracle(payload, truth, id_map).groups
    members = [sorted(g.member_ids) for g in exact]
    visible = sorted(payload.ids)
    cats = []
    choices = list(MockCategory)
    out_extra: list[list[int]] = []
    for k, g in enumerate(exact):
        cat = choices[int(rng.choice(4, p=model.probabilities))]
        cats.append(cat)
        cur = members[k]
        if cat == MockCategory.MISS:
            cur.pop(int(rng.integers(len(cur))))
        elif cat == MockCategory.EXTRA:
            candidates = [i for i in visible if i not in cur]
            if candidates:
                pick = candidates[int(rng.integers(len(candidates)))]
                for other in members:
                    if pick in other:
                        other.remove(pick)
                for other in out_extra:
                    if pick in other:
                        other.remove(pick)
                cur.append(pick)
        elif cat == MockCategory.ERROR and len(cur) >= 2:
            cut = int(rng.integers(1, len(cur)))
            members[k] = cur[:cut]
            out_extra.append(cur[cut:])
    groups: list[SocialGroup] = []
    next_id = max((g.group_id for g in exact), default=0) + 1
    for g, m in zip(exact, members):
        if m:
            groups.append(SocialGroup(g.group_id, frozenset(m), g.activity))
    for m in out_extra:
        if m:
            groups.append(SocialGroup(next_id, frozenset(m), None))
            next_id += 1
    return GroupEstimate(tuple(groups), EstimateSource.MOCK, payload.timestamp, tuple(cats))


class RemoteEstimatorError(RuntimeError):
    pass


@dataclass(frozen=True)
class RemoteConfig:
    url: str
    model: str
    key: str
    timeout: float = 10.0

    @classmethod
    def from_env(cls, timeout: float = 10.0) -> "RemoteConfig":
        missing = [v for v in ("GSON_LLM_URL", "GSON_LLM_MODEL", "GSON_LLM_KEY") if not os.environ.get(v)]
        if missing:
            raise RemoteEstimatorError(f"remote estimator needs environment variables {missing}")
        return cls(os.environ["GSON_LLM_URL"], os.environ["GSON_LLM_MODEL"], os.environ["GSON_LLM_KEY"], timeout)


def build_request(payload: AnnotationPayload, model: str) -> dict:
    return {
        "model": model,
        "messages": [
            {"role": "system", "content": payload.instruction or load_instruction()},
            {"role": "user", "content": payload.to_json()},
        ],
    }


_FENCE = re.compile(r"^```(?:json)?\s*|\s*```$")


def _reply_text(body) -> str:
    if isinstance(body, dict):
        if "groups" in body:
            return json.dumps(body)
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise RemoteEstimatorError(f"unexpected reply envelope: {exc!r}") from exc
    return str(body)


def parse_group_reply(body, valid_ids: set[int], issued_at: float = 0.0) -> GroupEstimate:
    """Parse the strict ``{"groups": [...], "activities": [...]}`` answer.

    Unknown ids are dropped; an id listed twice stays in the first group that
    names it.
    """
    text = _FENCE.sub("", _reply_text(body).strip())
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RemoteEstimatorError(f"reply is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("groups"), list):
        raise RemoteEstimatorError("reply lacks a 'groups' list")
    activities = data.get("activities") or []
    if not isinstance(activities, list):
        raise RemoteEstimatorError("'activities' must be a list")
    seen: set[int] = set()
    groups = []
    for k, raw in enumerate(data["groups"]):
        if not isinstance(raw, list):
            raise RemoteEstimatorError(f"group {k} is not a list")
        ids = []
        for m in raw:
            if isinstance(m, bool) or not isinstance(m, (int, float)) or not math.isfinite(m) or m != int(m):
                continue
            m = int(m)
            if m in valid_ids and m not in seen:
                seen.add(m)
                ids.append(m)
        if not ids:
            continue
        label = activities[k] if k < len(activities) else None
        try:
            activity = Activity(label) if label is not None else None
        except ValueError:
            activity = None
        groups.append(SocialGroup(k, frozenset(ids), activity))
    return GroupEstimate(tuple(groups), EstimateSource.REMOTE, issued_at)


def estimate_remote(payload: AnnotationPayload, config: RemoteConfig, client=None) -> GroupEstimate:
    import httpx

    request = build_request(payload, config.model)
    headers = {"Authorization": f"Bearer {config.key}", "Content-Type": "application/json"}
    own_client = client is None
    client = client or httpx.Client(timeout=config.timeout)
    try:
        resp = client.post(config.url, json=request, headers=headers, timeout=config.timeout)
        resp.raise_for_status()
        body = resp.json()
    except httpx.HTTPError as exc:
        raise RemoteEstimatorError(f"remote request failed: {exc}") from exc
    except ValueError as exc:
        raise RemoteEstimatorError(f"reply body is not JSON: {exc}") from exc
    finally:
        if own_client:
            client.close()
    return parse_group_reply(body, payload.ids, payload.timestamp)


class GroupEstimator(Protocol):
    source: EstimateSource

    def estimate(self, payload: AnnotationPayload) -> GroupEstimate: ...


TruthFn = Callable[[], tuple[list[SocialGroup], dict[int, int]]]


class OracleEstimator:
    source = EstimateSource.ORACLE

    def __init__(self, truth_fn: TruthFn):
        self.truth_fn = truth_fn

    def estimate(self, payload: AnnotationPayload) -> GroupEstimate:
        truth, id_map = self.truth_fn()
        return estimate_oracle(payload, truth, id_map)


class MockEstimator:
    source = EstimateSource.MOCK

    def __init__(self, truth_fn: TruthFn, model: MockErrorModel, rng: np.random.Generator):
        self.truth_fn = truth_fn
        self.model = model
        self.rng = rng

    def estimate(self, payload: AnnotationPayload) -> GroupEstimate:
        truth, id_map = self.truth_fn()
        return estimate_mock(payload, truth, self.model, self.rng, id_map)


class RemoteEstimator:
    source = EstimateSource.REMOTE

    def __init__(self, config: RemoteConfig, client=None):
        self.config = config
        self.client = client

    def estimate(self, payload: AnnotationPayload) -> GroupEstimate:
        return estimate_remote(payload, self.config, self.client)


@dataclass
class EstimateChannel:
    """Bounded-staleness hand-off between the estimator and the control loop.

    ``submit`` starts a query; ``poll`` is called at each tick boundary and
    returns the most recent successful estimate. Failures are logged and never
    clear the previous estimate. Synchronous estimators resolve inside
    ``submit`` but, like remote ones, only become visible at the next ``poll``.
    """

    estimator: GroupEstimator
    asynchronous: bool = False
    latest: GroupEstimate | None = None
    failures: int = 0
    _pending: list = field(default_factory=list)
    _pool: ThreadPoolExecutor | None = None

    def submit(self, payload: AnnotationPayload) -> None:
        if self.asynchronous:
            if self._pool is None:
                self._pool = ThreadPoolExecutor(max_workers=1)
            self._pending.append(self._pool.submit(self.estimator.estimate, payload))
            return
        try:
            self._pending.append(self.estimator.estimate(payload))
        except RemoteEstimatorError as exc:
            self.failures += 1
            log.warning("group estimate failed: %s", exc)

    def poll(self) -> GroupEstimate | None:
        still_running = []
        for item in self._pending:
            if isinstance(item, Future):
                if not item.done():
                    still_running.append(item)
                    continue
                try:
                    item = item.result()
                except RemoteEstimatorError as exc:
                    self.failures += 1
                    log.warning("group estimate failed: %s", exc)
                    continue
            if self.latest is None or item.issued_at >= self.latest.issued_at:
                self.latest = item
        self._pending = still_running
        return self.latest

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=False, cancel_futures=True)
