import json
import math

import numpy as np
import pytest

from physforge.clients import (
    ClientConfig,
    ClientError,
    EmbedderClient,
    JudgeClient,
    MockCrossModal,
    MockDetector,
    MockEmbedder,
    MockJudge,
    MockModel,
    MockPhysicsTool,
    MockReasoner,
    ReasonerClient,
    SchemaViolationError,
    TransportError,
    call,
    env_config,
    hash_sign_vector,
    make_client,
    validate_request,
    validate_response,
)


class FlakyTransport:
    """Fails with TransportError n times, then returns the given body."""

    def __init__(self, failures, body):
        self.failures = failures
        self.body = body
        self.attempts = 0

    def __call__(self, url, payload, timeout_s):
        self.attempts += 1
        if self.attempts <= self.failures:
            raise TransportError("connection reset")
        return self.body


class RecordingSleeper:
    def __init__(self):
        self.sleeps = []

    def __call__(self, seconds):
        self.sleeps.append(seconds)


class TestHashVectors:
    def test_unit_norm_exact_for_pow2_dim(self):
        vec = hash_sign_vector(0, "anything", 64)
        assert float(vec @ vec) == 1.0

    def test_deterministic(self):
        assert np.array_equal(hash_sign_vector(3, "text", 64), hash_sign_vector(3, "text", 64))

    def test_distinct_inputs_near_orthogonal(self):
        sims = [
            abs(float(hash_sign_vector(0, f"a{i}", 64) @ hash_sign_vector(0, f"b{i}", 64)))
            for i in range(50)
        ]
        assert max(sims) < 0.55
        assert sum(sims) / len(sims) < 0.15

    def test_large_dim_extends_hash_stream(self):
        vec = hash_sign_vector(0, "x", 512)
        assert vec.shape == (512,)
        assert float(vec @ vec) == pytest.approx(1.0, abs=1e-12)


class TestMockDeterminism:
    def test_embedder_same_text_identical(self):
        mock = MockEmbedder(seed=1)
        assert np.array_equal(mock.embed("steel ball"), mock.embed("steel ball"))

    def test_detector_fixture_table(self):
        table = {"img_а": [{"bbox": {"x": 0, "y": 0, "w": 0.5, "h": 0.5}, "labels": ["x"], "confidence": 0.9}]}
        mock = MockDetector(seed=0, label_pool=["a"], fixture=table)
        assert mock.detect("img_а") == table["img_а"]

    def test_full_pipeline_of_mocks_reproducible(self):
        for cls, request in [
            (MockEmbedder, {"text": "hello"}),
            (MockDetector, {"image_id": "img1"}),
            (MockCrossModal, {"frame_ref": "f1"}),
            (MockReasoner, {"prompt": "describe the scene"}),
            (MockPhysicsTool, {"frame_ref": "f1"}),
            (MockJudge, {"rubric": "r", "question": "q", "response": "a"}),
            (MockModel, {"payload": {"item_id": "x"}}),
        ]:
            a = cls(seed=7).respond(request)
            b = cls(seed=7).respond(request)
            assert a == b, cls.__name__

    def test_seed_changes_output(self):
        a = MockEmbedder(seed=0).embed("t")
        b = MockEmbedder(seed=1).embed("t")
        assert not np.array_equal(a, b)


class TestMockCrossModalPlants:
    def test_exact_plant_verbatim(self):
        plants = [{"match": "clip_b", "frame": {"kind": "exact", "values": [1.0]},
                   "audio": {"kind": "exact", "values": [0.5, math.sqrt(0.75)]}}]
        mock = MockCrossModal(seed=0, dim=64, plants=plants)
        frame = mock.embed_frame("clip_b/frame1")
        audio = mock.embed_audio_window("clip_b#aud@0-2")
        assert float(frame @ audio) == 0.5  # exact dot for the boundary plant

    def test_around_plant_controls_similarity(self):
        plants = [{"match": "clip_m", "frame": {"kind": "around", "axis": 0, "jitter": 0.316},
                   "audio": {"kind": "around", "axis": 0, "jitter": 0.316}}]
        mock = MockCrossModal(seed=0, dim=64, plants=plants)
        sims = [
            float(mock.embed_frame(f"clip_m/f{i}") @ mock.embed_audio_window(f"clip_m#a{i}"))
            for i in range(10)
        ]
        assert all(0.75 < s < 1.0 for s in sims)

    def test_unplanted_near_zero(self):
        mock = MockCrossModal(seed=0, dim=64)
        sim = float(mock.embed_frame("x/f1") @ mock.embed_audio_window("x#a1"))
        assert abs(sim) < 0.5


class TestMockReasoner:
    def test_analogy_reply_parses(self):
        from physforge.retrieval import analogy_complete

        properties, state = analogy_complete("mystery blob", MockReasoner(seed=0))
        assert state.value in ("rigid", "soft", "fluid")
        assert properties.present()

    def test_invalid_rate_plants_bound_violations(self):
        mock = MockReasoner(seed=0, invalid_rate=1.0)
        reply = mock.reply_to(
            "Object label: test thing\nReply with exactly one fenced JSON block"
        )
        assert '"restitution": 1.3' in reply


class TestSchemaValidation:
    def test_request_missing_field(self):
        with pytest.raises(SchemaViolationError, match="missing"):
            validate_request("embedder", {})

    def test_cross_modal_needs_one_of(self):
        with pytest.raises(SchemaViolationError):
            validate_request("cross_modal", {"schema_version": "1"})
        validate_request("cross_modal", {"frame_ref": "f"})

    def test_response_judge_arity(self):
        with pytest.raises(SchemaViolationError, match="6 scores"):
            validate_response("judge", {"scores": [1, 2, 3]})

    def test_unknown_role(self):
        with pytest.raises(ClientError, match="unknown specialist role"):
            validate_request("oracle", {})


class TestLiveTransportPaths:
    def cfg(self, retries=2):
        return ClientConfig(endpoint="http://fake", mock_mode=False, max_retries=retries)

    def test_malformed_body_is_schema_error_zero_retries(self):
        transport = FlakyTransport(0, "<html>oops</html>")
        sleeper = RecordingSleeper()
        client = ReasonerClient(self.cfg(), transport=transport, sleeper=sleeper)
        with pytest.raises(SchemaViolationError) as exc_info:
            client.complete("hi")
        assert exc_info.value.raw == "<html>oops</html>"
        assert transport.attempts == 1  # non-retryable
        assert sleeper.sleeps == []

    def test_transient_failures_retried_with_backoff(self):
        body = json.dumps({"schema_version": "1", "text": "ok"})
        transport = FlakyTransport(2, body)
        sleeper = RecordingSleeper()
        client = ReasonerClient(self.cfg(retries=3), transport=transport, sleeper=sleeper)
        assert client.complete("hi") == "ok"
        assert transport.attempts == 3
        assert sleeper.sleeps == [0.1, 0.2]  # exponential backoff

    def test_retry_budget_exhausted(self):
        transport = FlakyTransport(99, "{}")
        client = ReasonerClient(self.cfg(retries=1), transport=transport, sleeper=RecordingSleeper())
        with pytest.raises(TransportError, match="after 2 attempts"):
            client.complete("hi")

    def test_valid_body_schema_checked(self):
        body = json.dumps({"schema_version": "1", "wrong_field": 1})
        client = ReasonerClient(self.cfg(), transport=FlakyTransport(0, body), sleeper=RecordingSleeper())
        with pytest.raises(SchemaViolationError, match="missing fields"):
            client.complete("hi")


class TestHealthcheck:
    def test_mock_always_healthy(self):
        client = make_client("embedder", ClientConfig(mock_mode=True))
        status = client.healthcheck()
        assert status.healthy
        assert status.rtt_s == 0.0

    def test_unreachable_endpoint(self):
        def dead(url, payload, timeout_s):
            raise TransportError("no route to host")

        client = ReasonerClient(
            ClientConfig(endpoint="http://fake", mock_mode=False), transport=dead
        )
        status = client.healthcheck()
        assert not status.healthy
        assert "no route" in status.detail

    def test_repeated_checks_monotone_timestamps(self):
        client = make_client("judge", ClientConfig(mock_mode=True))
        stamps = [client.healthcheck().checked_at for _ in range(5)]
        assert all(b >= a for a, b in zip(stamps, stamps[1:]))


class TestFactoryAndConfig:
    def test_make_client_default_mocks(self):
        client = make_client("embedder", ClientConfig(mock_mode=True, mock_seed=5))
        vec = client.embed("steel")
        assert vec.shape == (64,)
        assert float(vec @ vec) == pytest.approx(1.0, abs=1e-9)

    def test_call_one_shot(self):
        response = call("embedder", {"text": "x"}, ClientConfig(mock_mode=True))
        assert len(response["vector"]) == 64

    def test_mock_counts_calls(self):
        client = make_client("reasoner", ClientConfig(mock_mode=True))
        client.complete("one")
        client.complete("two")
        assert client.calls == 2

    def test_live_without_endpoint_rejected(self):
        with pytest.raises(ClientError, match="endpoint"):
            ClientConfig(mock_mode=False)

    def test_env_config_forced_mock(self, monkeypatch):
        monkeypatch.setenv("FORGE_EMBEDDER_URL", "http://somewhere")
        monkeypatch.setenv("FORGE_MOCK", "1")
        cfg = env_config("embedder")
        assert cfg.mock_mode
        assert cfg.endpoint == "http://somewhere"

    def test_env_config_live(self, monkeypatch):
        monkeypatch.setenv("FORGE_EMBEDDER_URL", "http://somewhere")
        monkeypatch.delenv("FORGE_MOCK", raising=False)
        cfg = env_config("embedder")
        assert not cfg.mock_mode


class TestEmbedderClientWire:
    def test_mock_responses_pass_wire_validation(self):
        # mock replies run through the same response validators as live ones
        client = EmbedderClient(ClientConfig(mock_mode=True), mock=MockEmbedder(seed=0))
        assert client.embed("abc").shape == (64,)

    def test_judge_client_scores(self):
        client = JudgeClient(ClientConfig(mock_mode=True), mock=MockJudge(seed=0, constant=3.5))
        assert client.score("rubric", "q", "a") == [3.5] * 6
