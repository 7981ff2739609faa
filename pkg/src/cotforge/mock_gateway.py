"""Deterministic stand-in for the model endpoints.

Fixtures map request fingerprints to canned responses; anything unmatched goes
to a hash-seeded fallback generator, so identical fixtures plus identical
requests always yield identical responses. The same core can be used in
process (fast path for tests and ``--mock`` runs) or served over local HTTP
with the production wire contract.
"""

from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any

import numpy as np

from .gateway import CHAT_PATH, EMBEDDINGS_PATH, Endpoint, Gateway, RetryPolicy
from .hashing import canonical_json, sha256_hex


class FixtureError(ValueError):
    """A fixture file could not be parsed."""


def request_fingerprint(payload: dict) -> str:
    """Stable hash of a wire payload; the key fixtures are matched on."""
    return sha256_hex(canonical_json(payload))


def mock_embedding_vector(text: str, dim: int) -> list[float]:
    """Hash-seeded pseudo-random unit vector; equal texts embed identically."""
    rng = np.random.default_rng(int(sha256_hex("embed\x1f" + text)[:16], 16))
    vector = rng.standard_normal(dim)
    vector /= np.linalg.norm(vector)
    return [float(x) for x in vector]


_VOCAB = (
    "the", "figure", "shows", "value", "axis", "region", "count", "step", "compare",
    "left", "right", "upper", "lower", "curve", "point", "label", "total", "area",
    "shape", "object", "first", "second", "third", "grid", "cell", "sum", "result",
)

_TAG_POOL = (
    "reasoning", "object", "scene", "count", "text", "math", "spatial", "position",
    "chart", "comparison", "attribute", "layout",
)

# Hash-bucket rates for degenerate fallback replies; they exercise the reject
# paths of downstream stages without any fixture plumbing.
_TEACHER_MALFORMED_MOD = 19
_TEACHER_STRAY_MOD = 23
_SCORER_PROSE_MOD = 17


def _fallback_teacher_text(seed: int) -> str:
    rng = random.Random(seed)
    n_tokens = 24 + rng.randrange(90)
    words = []
    for i in range(n_tokens):
        word = rng.choice(_VOCAB)
        if i % 7 == 3:
            word = f"{word}{rng.randrange(1000)}"
        words.append(word)
    think = " ".join(words)
    answer = f"{rng.choice(_VOCAB)} {rng.randrange(100)}"
    if seed % _TEACHER_MALFORMED_MOD == 0:
        return f"<think>{think}\n<answer>{answer}</answer>"  # unclosed think block
    body = f"<think>{think}</think>\n<answer>{answer}</answer>"
    if seed % _TEACHER_STRAY_MOD == 0:
        return f"Sure, here is my reasoning.\n{body}"
    return body


def _fallback_scorer_text(seed: int) -> str:
    rng = random.Random(seed)
    if seed % _SCORER_PROSE_MOD == 0:
        return "The sample looks moderately difficult and the answer seems fine."
    difficulty = rng.choices((1, 2, 3, 4, 5), weights=(1, 24, 46, 27, 2))[0]
    quality = rng.choices((3, 4, 5), weights=(2, 7, 91))[0]
    tags = sorted(set(rng.choices(_TAG_POOL, k=1 + rng.randrange(3))))
    obj = json.dumps({"difficulty": difficulty, "quality": quality, "tags": tags})
    style = seed % 3
    if style == 0:
        return f"Here is the assessment.\n```json\n{obj}\n```"
    if style == 1:
        return f"Assessment: {obj}"
    return obj


def _wire_chat_body(text: str, finish: str = "stop") -> dict[str, Any]:
    return {
        "choices": [
            {
                "index": 0,
                "message": {"role": "assistant", "content": text},
                "finish_reason": finish,
            }
        ],
        "usage": {
            "prompt_tokens": 0,
            "completion_tokens": len(text.split()),
            "total_tokens": len(text.split()),
        },
    }


def _as_wire_body(response: Any) -> dict[str, Any]:
    if isinstance(response, dict) and "text" in response and "choices" not in response:
        return _wire_chat_body(str(response["text"]), str(response.get("finish_reason", "stop")))
    if isinstance(response, dict):
        return response
    raise FixtureError(f"fixture response must be an object, got {type(response).__name__}")


def _looks_like_scorer(payload: dict) -> bool:
    for message in payload.get("messages", []):
        content = message.get("content", "")
        if isinstance(content, list):
            content = " ".join(str(part.get("text", "")) for part in content if isinstance(part, dict))
        if "bare JSON object" in str(content):
            return True
    return False


class MockModelService:
    """Fixture-backed chat and embedding endpoints with deterministic fallbacks."""

    def __init__(
        self,
        fixture_dir: str | Path | None = None,
        *,
        embedding_dim: int = 32,
        fallback: bool = True,
        chat_overrides: dict[str, Any] | None = None,
        embedding_overrides: dict[str, list[float]] | None = None,
    ):
        self.embedding_dim = embedding_dim
        self.fallback = fallback
        self._chat_fixtures: dict[str, dict[str, Any]] = {}
        self._embedding_overrides: dict[str, list[float]] = dict(embedding_overrides or {})
        if fixture_dir is not None:
            self._load_fixture_dir(Path(fixture_dir))
        for request_hash, response in (chat_overrides or {}).items():
            self._chat_fixtures[request_hash] = {"response": response}

    def _load_fixture_dir(self, fixture_dir: Path) -> None:
        settings_path = fixture_dir / "mock.json"
        if settings_path.exists():
            settings = self._read_json(settings_path)
            if not isinstance(settings, dict):
                raise FixtureError(f"{settings_path}: settings must be an object")
            self.fallback = bool(settings.get("fallback", self.fallback))
            self.embedding_dim = int(settings.get("embedding_dim", self.embedding_dim))
        embeddings_path = fixture_dir / "embeddings.json"
        if embeddings_path.exists():
            table = self._read_json(embeddings_path)
            if not isinstance(table, dict):
                raise FixtureError(f"{embeddings_path}: embeddings must map text to vector")
            self._embedding_overrides.update(
                {str(k): [float(x) for x in v] for k, v in table.items()}
            )
        for path in sorted(fixture_dir.glob("*.json")):
            if path.name in ("mock.json", "embeddings.json"):
                continue
            entries = self._read_json(path)
            if isinstance(entries, dict):
                entries = [entries]
            if not isinstance(entries, list):
                raise FixtureError(f"{path}: expected a fixture object or list")
            for entry in entries:
                if not isinstance(entry, dict) or "request_hash" not in entry or "response" not in entry:
                    raise FixtureError(f"{path}: fixture needs request_hash and response")
                self._chat_fixtures[str(entry["request_hash"])] = entry

    @staticmethod
    def _read_json(path: Path) -> Any:
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise FixtureError(f"{path}: {exc}") from exc

    def handle(self, path: str, payload: dict) -> tuple[int, dict]:
        if path.endswith(CHAT_PATH):
            return self._handle_chat(payload)
        if path.endswith(EMBEDDINGS_PATH):
            return self._handle_embeddings(payload)
        return 404, {"error": {"message": f"unknown path {path}", "type": "not_found"}}

    def _handle_chat(self, payload: dict) -> tuple[int, dict]:
        fingerprint = request_fingerprint(payload)
        fixture = self._chat_fixtures.get(fingerprint)
        if fixture is not None:
            return int(fixture.get("status", 200)), _as_wire_body(fixture["response"])
        if not self.fallback:
            return 404, {
                "error": {
                    "message": f"no fixture for request {fingerprint}",
                    "type": "fixture_not_found",
                }
            }
        seed = int(fingerprint[:16], 16)
        if _looks_like_scorer(payload):
            text = _fallback_scorer_text(seed)
        else:
            text = _fallback_teacher_text(seed)
        return 200, _wire_chat_body(text)

    def _handle_embeddings(self, payload: dict) -> tuple[int, dict]:
        texts = payload.get("input")
        if not isinstance(texts, list) or not texts:
            return 400, {"error": {"message": "input must be a nonempty list", "type": "bad_request"}}
        data = []
        for index, text in enumerate(texts):
            vector = self._embedding_overrides.get(str(text))
            if vector is None:
                vector = mock_embedding_vector(str(text), self.embedding_dim)
            data.append({"index": index, "embedding": vector})
        return 200, {"data": data, "model": payload.get("model", "mock-embedder"), "usage": {}}


@dataclass
class InProcessTransport:
    """Adapts a MockModelService to the transport interface, no sockets involved."""

    service: MockModelService

    def post_json(self, path: str, payload: dict) -> tuple[int, dict]:
        return self.service.handle(path, payload)


def mock_gateway(
    fixture_dir: str | Path | None = None,
    *,
    service: MockModelService | None = None,
    **service_kwargs: Any,
) -> Gateway:
    """Gateway whose three roles all talk to one in-process mock service."""
    service = service or MockModelService(fixture_dir, **service_kwargs)
    retry = RetryPolicy(max_attempts=2, base_backoff=0.0, jitter_fraction=0.0)

    def endpoint(model: str) -> Endpoint:
        return Endpoint(transport=InProcessTransport(service), model_name=model, retry=retry, sleep=lambda _: None)

    return Gateway(teacher=endpoint("mock-teacher"), scorer=endpoint("mock-scorer"), embedder=endpoint("mock-embedder"))


class _MockHandler(BaseHTTPRequestHandler):
    service: MockModelService  # set on the subclass at server build time

    def do_POST(self) -> None:  # noqa: N802 (http.server API)
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length)
        try:
            payload = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            self._reply(400, {"error": {"message": "body is not JSON", "type": "bad_request"}})
            return
        status, body = self.service.handle(self.path, payload)
        self._reply(status, body)

    def _reply(self, status: int, body: dict) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, format: str, *args: Any) -> None:  # noqa: A002
        pass


class MockServer:
    """Local HTTP endpoint speaking the production wire contract."""

    def __init__(self, service: MockModelService, host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundMockHandler", (_MockHandler,), {"service": service})
        self._httpd = ThreadingHTTPServer((host, port), handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "MockServer":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()


def serve_mock(
    fixture_dir: str | Path | None = None,
    *,
    host: str = "127.0.0.1",
    port: int = 0,
    **service_kwargs: Any,
) -> MockServer:
    """Start a local mock endpoint; fully deterministic given its fixtures."""
    return MockServer(MockModelService(fixture_dir, **service_kwargs), host=host, port=port)
