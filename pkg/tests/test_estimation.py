import json
import threading

import httpx
import numpy as np
import pytest

from gsonnav.estimation import (
    AnnotationPayload,
    EstimateChannel,
    EstimateSource,
    GroupEstimate,
    MockCategory,
    MockErrorModel,
    RemoteConfig,
    RemoteEstimator,
    RemoteEstimatorError,
    TrackEntry,
    build_request,
    estimate_mock,
    estimate_oracle,
    estimate_remote,
    load_instruction,
    parse_group_reply,
)
from gsonnav.perception import Keyframe
from gsonnav.world import Activity, SocialGroup


def _payload(ids, t=1.0) -> AnnotationPayload:
    return AnnotationPayload(t, tuple(TrackEntry(i, (float(i), 0.0), (0.0, 0.0)) for i in ids), "instr")


TRUTH = [SocialGroup(1, {1, 2, 3}, Activity.QUEUE), SocialGroup(2, {4, 5}, Activity.CONVERSATION)]


def test_oracle_restricts_to_visible_tracks():
    est = estimate_oracle(_payload([1, 2, 5, 9]), TRUTH)
    assert {g.group_id: g.member_ids for g in est.groups} == {1: {1, 2}, 2: {5}}
    assert est.source == EstimateSource.ORACLE and est.issued_at == 1.0


def test_oracle_maps_track_ids_to_people():
    est = estimate_oracle(_payload([10, 11, 12]), TRUTH, id_map={10: 1, 11: 4, 12: 3})
    assert {g.group_id: g.member_ids for g in est.groups} == {1: {10, 12}, 2: {11}}


def test_mock_category_frequencies_match_model():
    model = MockErrorModel(0.73, 0.09, 0.09, 0.09)
    rng = np.random.default_rng(2024)
    truth = [SocialGroup(1, {1, 2, 3})]
    payload = _payload([1, 2, 3, 4, 5])
    counts = {c: 0 for c in MockCategory}
    n = 10_000
    for _ in range(n):
        (cat,) = estimate_mock(payload, truth, model, rng).categories
        counts[cat] += 1
    for cat, p in zip(MockCategory, model.probabilities):
        assert abs(counts[cat] / n - p) <= 0.02


@pytest.mark.parametrize(
    "category, check",
    [
        ("accurate", lambda gs: gs == [{1, 2, 3}]),
        ("miss", lambda gs: len(gs) == 1 and len(gs[0]) == 2 and gs[0] < {1, 2, 3}),
        ("extra", lambda gs: len(gs) == 1 and gs[0] > {1, 2, 3} and len(gs[0]) == 4),
        ("error", lambda gs: len(gs) == 2 and set().union(*gs) == {1, 2, 3}),
    ],
)
def test_mock_categories_perturb_as_described(category, check):
    probs = {c: 0.0 for c in ("p_accurate", "p_miss", "p_extra", "p_error")}
    probs[f"p_{category}"] = 1.0
    model = MockErrorModel(**probs)
    est = estimate_mock(_payload([1, 2, 3, 7]), [SocialGroup(1, {1, 2, 3})], model, np.random.default_rng(0))
    assert est.categories == (MockCategory(category),)
    assert check([set(g.member_ids) for g in est.groups])


def test_mock_groups_stay_disjoint():
    rng = np.random.default_rng(1)
    model = MockErrorModel(0.1, 0.3, 0.3, 0.3)
    for _ in range(300):
        est = estimate_mock(_payload(range(1, 8)), TRUTH, model, rng)
        seen = set()
        for g in est.groups:
            assert not (seen & g.member_ids)
            seen |= g.member_ids


def test_mock_model_validation():
    with pytest.raises(ValueError):
        MockErrorModel(0.5, 0.5, 0.5, -0.5)
    with pytest.raises(ValueError):
        MockErrorModel(0.7, 0.1, 0.1, 0.2)


def test_group_estimate_rejects_overlap():
    with pytest.raises(ValueError):
        GroupEstimate((SocialGroup(1, {1, 2}), SocialGroup(2, {2})), EstimateSource.ORACLE, 0.0)


def test_parse_reply_drops_unknown_and_duplicate_ids():
    body = {"choices": [{"message": {"content": '```json\n{"groups": [[1, 2, 99], [2, 3], [4.0]], "activities": ["queue", "dancing"]}\n```'}}]}
    est = parse_group_reply(body, {1, 2, 3, 4}, 2.5)
    assert [set(g.member_ids) for g in est.groups] == [{1, 2}, {3}, {4}]
    assert [g.activity for g in est.groups] == [Activity.QUEUE, None, None]
    assert est.issued_at == 2.5 and est.source == EstimateSource.REMOTE


@pytest.mark.parametrize("body", ["not json", '{"people": []}', '{"groups": [1, 2]}', {"choices": []}])
def test_parse_reply_rejects_malformed(body):
    with pytest.raises(RemoteEstimatorError):
        parse_group_reply(body, {1, 2})


def test_payload_json_and_request():
    kf = Keyframe(3.0, (1, 2), {1: (1.234, 2.0), 2: (0.0, 0.0)}, {1: (0.5, 0.0), 2: (0.0, 0.0)})
    payload = AnnotationPayload.from_keyframe(kf)
    data = json.loads(payload.to_json())
    assert data["people"][0] == {"id": 1, "position": [1.23, 2.0], "velocity": [0.5, 0.0]}
    req = build_request(payload, "m")
    assert req["model"] == "m" and req["messages"][0]["content"] == load_instruction()
    assert '"groups"' in load_instruction()


def _client(handler) -> httpx.Client:
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_remote_estimator_round_trip():
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["auth"] = request.headers["Authorization"]
        seen["body"] = json.loads(request.content)
        reply = {"groups": [[1, 2]], "activities": ["conversation"]}
        return httpx.Response(200, json={"choices": [{"message": {"content": json.dumps(reply)}}]})

    config = RemoteConfig("https://llm.example/v1/chat", "vision-model", "secret")
    est = RemoteEstimator(config, _client(handler)).estimate(_payload([1, 2, 3]))
    assert seen["auth"] == "Bearer secret"
    assert seen["body"]["model"] == "vision-model"
    assert [set(g.member_ids) for g in est.groups] == [{1, 2}]


def test_remote_http_errors_become_estimator_errors():
    config = RemoteConfig("https://llm.example/v1/chat", "m", "k")
    with pytest.raises(RemoteEstimatorError):
        estimate_remote(_payload([1]), config, _client(lambda r: httpx.Response(500)))
    with pytest.raises(RemoteEstimatorError):
        estimate_remote(_payload([1]), config, _client(lambda r: httpx.Response(200, content=b"<html>")))


def test_remote_config_requires_environment(monkeypatch):
    for var in ("GSON_LLM_URL", "GSON_LLM_MODEL", "GSON_LLM_KEY"):
        monkeypatch.delenv(var, raising=False)
    with pytest.raises(RemoteEstimatorError):
        RemoteConfig.from_env()


class _Scripted:
    source = EstimateSource.MOCK

    def __init__(self, fail_on=()):
        self.fail_on = set(fail_on)

    def estimate(self, payload):
        if payload.timestamp in self.fail_on:
            raise RemoteEstimatorError("boom")
        return GroupEstimate((SocialGroup(1, payload.ids),), EstimateSource.MOCK, payload.timestamp)


def test_channel_publishes_at_next_poll_and_keeps_last_on_failure():
    channel = EstimateChannel(_Scripted(fail_on={2.0}))
    assert channel.poll() is None
    channel.submit(_payload([1], t=1.0))
    assert channel.latest is None  # not visible until the next tick boundary
    assert channel.poll().issued_at == 1.0
    channel.submit(_payload([1], t=2.0))
    assert channel.poll().issued_at == 1.0 and channel.failures == 1


def test_async_channel_delivers_remote_results():
    gate = threading.Event()

    class Slow(_Scripted):
        def estimate(self, payload):
            gate.wait(5)
            return super().estimate(payload)

    channel = EstimateChannel(Slow(), asynchronous=True)
    channel.submit(_payload([1, 2], t=4.0))
    assert channel.poll() is None  # still running
    gate.set()
    channel._pending[0].result(timeout=5)
    assert channel.poll().issued_at == 4.0
    channel.close()
