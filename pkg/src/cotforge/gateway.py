"""Chat and embedding endpoints over HTTP, with retry, plus the role bundle.

The wire contract is a chat-completions style JSON protocol so hosted models
drop in directly and the mock server can speak the same dialect. The client
never mutates message text: what the prompt renderer produced is what goes on
the wire.
"""

from __future__ import annotations

import os
import random
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Protocol, Sequence

import requests

CHAT_PATH = "/chat/completions"
EMBEDDINGS_PATH = "/embeddings"

_RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


class GatewayError(Exception):
    """Base class for endpoint failures."""


class AuthFailure(GatewayError):
    """Credential rejected; never retried."""


class RequestRejected(GatewayError):
    """Endpoint refused the request for a non-transient reason."""


class AttemptsExhausted(GatewayError):
    """All retry attempts failed; message carries the last underlying error."""


class MalformedEndpointResponse(GatewayError):
    """The endpoint replied with a body that does not match the wire contract."""


class DimensionMismatch(GatewayError):
    """Embedding endpoint returned vectors of inconsistent dimension."""


class TransientTransportError(GatewayError):
    """Connection-level failure worth retrying."""


class FinishReason(str, Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


@dataclass(frozen=True)
class ChatMessage:
    role: str
    text: str
    image_ref: str | None = None

    def __post_init__(self) -> None:
        if self.role not in ("system", "user"):
            raise ValueError(f"unsupported message role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    model_name: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("request needs at least one message")
        system_positions = [i for i, m in enumerate(self.messages) if m.role == "system"]
        if len(system_positions) > 1 or (system_positions and system_positions[0] != 0):
            raise ValueError("at most one system message, placed first")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be within [0, 2]")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    finish_reason: FinishReason
    usage: dict[str, int] | None = None
    attempts: int = 1

    def __post_init__(self) -> None:
        if self.finish_reason is not FinishReason.ERROR and self.text is None:
            raise ValueError("text must be present unless finish_reason is error")


@dataclass(frozen=True)
class EmbeddingBatch:
    texts: tuple[str, ...]
    vectors: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if len(self.texts) != len(self.vectors):
            raise DimensionMismatch("one vector per text required")
        dims = {len(v) for v in self.vectors}
        if len(dims) > 1:
            raise DimensionMismatch(f"ragged embedding dimensions: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return len(self.vectors[0]) if self.vectors else 0


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 4
    base_backoff: float = 0.5
    jitter_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")
        if self.base_backoff < 0:
            raise ValueError("base_backoff must be nonnegative")
        if not 0.0 <= self.jitter_fraction <= 1.0:
            raise ValueError("jitter_fraction must be within [0, 1]")

    def backoff(self, attempt: int, rng: random.Random) -> float:
        # doubling dominates the jitter band, so delays never shrink
        return self.base_backoff * (2**attempt) * (1.0 + self.jitter_fraction * rng.random())


def chat_payload(request: ChatRequest) -> dict[str, Any]:
    """Wire encoding of a chat request; image references ride as URI parts."""
    messages: list[dict[str, Any]] = []
    for message in request.messages:
        content: Any
        if message.image_ref:
            content = [
                {"type": "text", "text": message.text},
                {"type": "image_url", "image_url": {"url": message.image_ref}},
            ]
        else:
            content = message.text
        messages.append({"role": message.role, "content": content})
    return {
        "model": request.model_name,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    }


def parse_chat_body(body: dict) -> tuple[str, FinishReason, dict[str, int] | None]:
    try:
        choice = body["choices"][0]
        text = choice["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedEndpointResponse(f"chat body missing choices/message: {exc!r}") from exc
    if not isinstance(text, str):
        raise MalformedEndpointResponse("chat message content is not text")
    raw_finish = choice.get("finish_reason", "stop")
    if raw_finish == "stop":
        finish = FinishReason.STOP
    elif raw_finish == "length":
        finish = FinishReason.LENGTH
    else:
        finish = FinishReason.ERROR
    usage = body.get("usage")
    if usage is not None and not isinstance(usage, dict):
        usage = None
    return text, finish, usage


def _error_text(body: dict) -> str:
    if isinstance(body, dict):
        err = body.get("error")
        if isinstance(err, dict) and "message" in err:
            return str(err["message"])
    return str(body)[:200]


class Transport(Protocol):
    def post_json(self, path: str, payload: dict) -> tuple[int, dict]: ...


@dataclass
class HttpTransport:
    """POSTs JSON to ``base_url`` + path; the API key comes from one env var."""

    base_url: str
    api_key_env: str = "COTFORGE_API_KEY"
    timeout: float = 120.0

    def post_json(self, path: str, payload: dict) -> tuple[int, dict]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        url = self.base_url.rstrip("/") + path
        try:
            response = requests.post(url, json=payload, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransientTransportError(str(exc)) from exc
        try:
            body = response.json()
        except ValueError:
            body = {"raw": response.text}
        return response.status_code, body


@dataclass
class Endpoint:
    """One model role: retries transient failures, surfaces permanent ones."""

    transport: Transport
    model_name: str = ""
    retry: RetryPolicy = RetryPolicy()
    embed_batch_size: int = 512
    sleep: Callable[[float], None] = time.sleep
    rng: random.Random = field(default_factory=random.Random)

    def _post_with_retry(self, path: str, payload: dict, policy: RetryPolicy) -> tuple[dict, int]:
        last: Exception | None = None
        for attempt in range(policy.max_attempts):
            if attempt:
                self.sleep(policy.backoff(attempt - 1, self.rng))
            try:
                status, body = self.transport.post_json(path, payload)
            except TransientTransportError as exc:
                last = exc
                continue
            if status in (401, 403):
                raise AuthFailure(f"endpoint rejected credentials (HTTP {status})")
            if status in _RETRYABLE_STATUSES:
                last = RequestRejected(f"HTTP {status}: {_error_text(body)}")
                continue
            if status != 200:
                raise RequestRejected(f"HTTP {status}: {_error_text(body)}")
            return body, attempt + 1
        raise AttemptsExhausted(f"gave up after {policy.max_attempts} attempts: {last}")

    def complete(self, request: ChatRequest, policy: RetryPolicy | None = None) -> ChatResponse:
        body, attempts = self._post_with_retry(CHAT_PATH, chat_payload(request), policy or self.retry)
        text, finish, usage = parse_chat_body(body)
        return ChatResponse(text=text, finish_reason=finish, usage=usage, attempts=attempts)

    def embed(self, texts: Sequence[str], policy: RetryPolicy | None = None) -> EmbeddingBatch:
        texts = list(texts)
        if not texts or any(not t for t in texts):
            raise ValueError("texts must be nonempty, each nonempty")
        vectors: list[tuple[float, ...]] = []
        for start in range(0, len(texts), self.embed_batch_size):
            chunk = texts[start : start + self.embed_batch_size]
            payload = {"model": self.model_name, "input": chunk}
            body, _ = self._post_with_retry(EMBEDDINGS_PATH, payload, policy or self.retry)
            vectors.extend(self._parse_embedding_body(body, len(chunk)))
        dims = {len(v) for v in vectors}
        if len(dims) > 1:
            raise DimensionMismatch(f"ragged embedding dimensions: {sorted(dims)}")
        return EmbeddingBatch(texts=tuple(texts), vectors=tuple(vectors))

    @staticmethod
    def _parse_embedding_body(body: dict, expected: int) -> list[tuple[float, ...]]:
        data = body.get("data")
        if not isinstance(data, list) or len(data) != expected:
            raise MalformedEndpointResponse("embedding body missing one entry per input")
        rows: list[tuple[float, ...]] = [()] * expected
        for entry in data:
            try:
                index = entry["index"]
                vector = entry["embedding"]
            except (KeyError, TypeError) as exc:
                raise MalformedEndpointResponse(f"embedding entry malformed: {exc!r}") from exc
            if not isinstance(vector, list):
                raise MalformedEndpointResponse("embedding vector is not a list")
            rows[index] = tuple(float(x) for x in vector)
        return rows


@dataclass
class Gateway:
    """The three remote model roles the pipeline talks to."""

    teacher: Endpoint
    scorer: Endpoint
    embedder: Endpoint
