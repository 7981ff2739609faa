import json

import numpy as np
import pytest

from cotforge.annotate import ScorerConfig, render_scorer_prompt
from cotforge.distill import TeacherConfig, render_teacher_prompt
from cotforge.gateway import Endpoint, HttpTransport, RequestRejected, RetryPolicy, chat_payload
from cotforge.mock_gateway import (
    FixtureError,
    InProcessTransport,
    MockModelService,
    mock_gateway,
    request_fingerprint,
    serve_mock,
)

from helpers import distilled_record, make_seed


def test_mock_chat_is_deterministic(gateway):
    request = render_teacher_prompt(make_seed(1), TeacherConfig())
    first = gateway.teacher.complete(request)
    second = gateway.teacher.complete(request)
    assert first.text == second.text


def test_scorer_fallback_produces_parseable_annotation(gateway):
    from cotforge.annotate import extract_json_object

    record = distilled_record(3, "a reasoning chain with several steps here")
    reply = gateway.scorer.complete(render_scorer_prompt(record, ScorerConfig()))
    # some hash buckets intentionally return prose; pick a record that parses
    found = False
    for i in range(10):
        record = distilled_record(i, f"reasoning chain number {i} with steps")
        reply = gateway.scorer.complete(render_scorer_prompt(record, ScorerConfig()))
        try:
            annotation = extract_json_object(reply.text)
        except Exception:
            continue
        found = True
        assert 1 <= annotation.difficulty <= 5
        assert annotation.tags
    assert found


class TestMockEmbeddings:
    def test_unit_norm_and_configured_dim(self):
        service = MockModelService(embedding_dim=8)
        endpoint = Endpoint(transport=InProcessTransport(service), model_name="e", sleep=lambda _: None)
        batch = endpoint.embed(["count"])
        assert batch.dim == 8
        assert abs(np.linalg.norm(batch.vectors[0]) - 1.0) < 1e-9

    def test_same_text_same_vector(self):
        service = MockModelService(embedding_dim=8)
        endpoint = Endpoint(transport=InProcessTransport(service), model_name="e", sleep=lambda _: None)
        batch = endpoint.embed(["spatial", "spatial"])
        assert batch.vectors[0] == batch.vectors[1]

    def test_large_batch_constant_dimension(self):
        service = MockModelService(embedding_dim=12)
        endpoint = Endpoint(transport=InProcessTransport(service), model_name="e", sleep=lambda _: None)
        texts = [f"tag-{i}" for i in range(1000)]
        batch = endpoint.embed(texts)
        assert len(batch.vectors) == 1000
        assert {len(v) for v in batch.vectors} == {12}

    def test_override_table(self):
        service = MockModelService(
            embedding_dim=3, embedding_overrides={"spatial": [1.0, 0.0, 0.0]}
        )
        endpoint = Endpoint(transport=InProcessTransport(service), model_name="e", sleep=lambda _: None)
        batch = endpoint.embed(["spatial"])
        assert batch.vectors[0] == (1.0, 0.0, 0.0)


class TestFixtures:
    def build_request_payload(self):
        request = render_teacher_prompt(make_seed(5), TeacherConfig())
        return chat_payload(request), request

    def test_fixture_served_verbatim(self, tmp_path):
        payload, request = self.build_request_payload()
        fingerprint = request_fingerprint(payload)
        canned = "<think>planted reasoning trace for test</think><answer>planted</answer>"
        (tmp_path / "fx.json").write_text(
            json.dumps({"request_hash": fingerprint, "response": {"text": canned}})
        )
        gateway = mock_gateway(tmp_path)
        assert gateway.teacher.complete(request).text == canned

    def test_no_fixture_no_fallback_is_structured_404(self, tmp_path):
        (tmp_path / "mock.json").write_text(json.dumps({"fallback": False}))
        gateway = mock_gateway(tmp_path)
        _, request = self.build_request_payload()
        with pytest.raises(RequestRejected, match="no fixture"):
            gateway.teacher.complete(request)

    def test_scorer_fixture_reaches_annotator_verbatim(self, tmp_path):
        record = distilled_record(9, "several reasoning steps in a row")
        request = render_scorer_prompt(record, ScorerConfig())
        fingerprint = request_fingerprint(chat_payload(request))
        rubric_reply = {"difficulty": 2, "quality": 5, "tags": ["count"]}
        (tmp_path / "fx.json").write_text(
            json.dumps([{"request_hash": fingerprint, "response": {"text": json.dumps(rubric_reply)}}])
        )
        gateway = mock_gateway(tmp_path)
        assert gateway.scorer.complete(request).text == json.dumps(rubric_reply)

    def test_fixture_parse_failure(self, tmp_path):
        (tmp_path / "broken.json").write_text("{nope")
        with pytest.raises(FixtureError):
            MockModelService(tmp_path)

    def test_fixture_missing_keys(self, tmp_path):
        (tmp_path / "broken.json").write_text(json.dumps({"response": {}}))
        with pytest.raises(FixtureError):
            MockModelService(tmp_path)


def test_served_endpoint_speaks_wire_contract():
    with serve_mock(embedding_dim=4) as server:
        transport = HttpTransport(base_url=server.base_url, api_key_env="UNSET_TEST_KEY")
        endpoint = Endpoint(
            transport=transport,
            model_name="m",
            retry=RetryPolicy(max_attempts=2, base_backoff=0.0, jitter_fraction=0.0),
            sleep=lambda _: None,
        )
        request = render_teacher_prompt(make_seed(2), TeacherConfig())
        over_http = endpoint.complete(request).text
        in_process = mock_gateway(embedding_dim=4).teacher.complete(request).text
        assert over_http == in_process
        batch = endpoint.embed(["alpha", "beta"])
        assert batch.dim == 4
