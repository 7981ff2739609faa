"""Joint scoring: one judge call returns difficulty, quality, and tags together."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Any

from .gateway import ChatMessage, ChatRequest, Endpoint
from .records import Annotation, CuratedRecord, RejectCode, RejectReason, Status

SCORER_RUBRIC_PROMPT = """You are a strict annotator for multimodal question-answer traces. \
Given an image, an instruction, and a model response, judge the sample on two scales and tag it.

Reasoning difficulty (choose one integer 1-5):
1 (Very Easy): Object is plainly present; requires simple color or shape identification.
2 (Easy): Involves basic counting of clearly visible items, or straightforward spatial relationships.
3 (Moderate): Requires brief reasoning or identification of common actions or attributes.
4 (Hard): Demands multi-step reasoning, attention to subtle visual cues, or handling rare concepts.
5 (Very Hard): Involves abstract reasoning, complex scene understanding, or highly ambiguous context.

Answer quality (choose one integer 1-5):
1 (Very Low): Entirely incorrect or irrelevant answer.
2 (Low): Mostly incorrect, with only minor correct elements present.
3 (Medium): Partially correct; key details are missing or incorrect elements are present.
4 (High): Largely correct, with only minor inaccuracies or omissions.
5 (Very High): Fully accurate, precise, and complete response.

Semantic tags: a short list of lowercase task tags (e.g. counting, spatial, reasoning, math, object) \
characterizing the sample's skills and domain.

Respond with only a bare JSON object with keys "difficulty", "quality", and "tags". \
No prose, no code fences."""

SCORER_QUERY_TEMPLATE = """### Image
<image>
### Instruction
{instruction}
### Response
{response}"""

REASK_PROMPT = (
    'Your previous reply could not be parsed. Respond again with only a bare JSON object '
    'with keys "difficulty", "quality", and "tags", and no other text.'
)

SCORER_MAX_OUTPUT_TOKENS = 1024


@dataclass(frozen=True)
class ScorerConfig:
    model_name: str = "scorer"
    rubric_prompt: str = SCORER_RUBRIC_PROMPT
    temperature: float = 0.0


def render_scorer_prompt(record: CuratedRecord, config: ScorerConfig) -> ChatRequest:
    """Pure render: rubric in the system message, sample content in the user turn."""
    if record.status is not Status.DISTILLED:
        raise ValueError(f"scorer expects a distilled record, got {record.status.value}")
    if record.trace is None:
        raise ValueError("distilled record is missing its trace")
    user_text = SCORER_QUERY_TEMPLATE.format(
        instruction=record.seed.instruction, response=record.trace.raw_text
    )
    return ChatRequest(
        model_name=config.model_name,
        messages=(
            ChatMessage(role="system", text=config.rubric_prompt),
            ChatMessage(role="user", text=user_text, image_ref=record.seed.image_ref or None),
        ),
        temperature=config.temperature,
        max_output_tokens=SCORER_MAX_OUTPUT_TOKENS,
    )


def render_reask_prompt(request: ChatRequest) -> ChatRequest:
    """The single structured re-ask used after an unparseable scorer reply."""
    return ChatRequest(
        model_name=request.model_name,
        messages=request.messages + (ChatMessage(role="user", text=REASK_PROMPT),),
        temperature=request.temperature,
        max_output_tokens=request.max_output_tokens,
    )


class ScoreErrorKind(str, Enum):
    NO_JSON_FOUND = "no_json_found"
    UNBALANCED_BRACES = "unbalanced_braces"
    MISSING_KEY = "missing_key"
    RANGE_VIOLATION = "range_violation"
    EMPTY_TAGS = "empty_tags"


class ScoreParseError(ValueError):
    def __init__(self, kind: ScoreErrorKind, message: str, *, key: str | None = None):
        super().__init__(message)
        self.kind = kind
        self.key = key


def _first_json_object(text: str) -> dict:
    decoder = json.JSONDecoder()
    position = text.find("{")
    if position == -1:
        raise ScoreParseError(ScoreErrorKind.NO_JSON_FOUND, "no JSON object in scorer reply")
    while position != -1:
        try:
            obj, _ = decoder.raw_decode(text, position)
        except json.JSONDecodeError:
            position = text.find("{", position + 1)
            continue
        if isinstance(obj, dict):
            return obj
        position = text.find("{", position + 1)
    raise ScoreParseError(
        ScoreErrorKind.UNBALANCED_BRACES, "braces never balance into a JSON object"
    )


def _coerce_level(value: Any, key: str) -> int:
    level: int | None = None
    if isinstance(value, bool):
        level = None
    elif isinstance(value, int):
        level = value
    elif isinstance(value, float) and value.is_integer():
        level = int(value)
    elif isinstance(value, str):
        text = value.strip()
        try:
            level = int(text)
        except ValueError:
            try:
                number = float(text)
            except ValueError:
                level = None
            else:
                level = int(number) if number.is_integer() else None
    if level is None or not 1 <= level <= 5:
        raise ScoreParseError(
            ScoreErrorKind.RANGE_VIOLATION,
            f"{key} must be an integer in [1,5], got {value!r}",
            key=key,
        )
    return level


def normalize_tags(raw: Any) -> tuple[str, ...]:
    """Lowercase, strip, deduplicate, and sort; anything unusable is dropped."""
    if isinstance(raw, str):
        raw = [raw]
    if not isinstance(raw, list):
        raise ScoreParseError(ScoreErrorKind.EMPTY_TAGS, f"tags must be a list, got {type(raw).__name__}")
    cleaned = {t.strip().lower() for t in raw if isinstance(t, str) and t.strip()}
    if not cleaned:
        raise ScoreParseError(ScoreErrorKind.EMPTY_TAGS, "no usable tags in scorer reply")
    return tuple(sorted(cleaned))


def extract_json_object(text: str) -> Annotation:
    """Locate the first balanced top-level JSON object in the reply and validate it.

    Surrounding prose and code fences are ignored; difficulty and quality are
    coerced from numbers or numeric strings.
    """
    obj = _first_json_object(text)
    for key in ("difficulty", "quality", "tags"):
        if key not in obj:
            raise ScoreParseError(ScoreErrorKind.MISSING_KEY, f"scorer reply missing {key!r}", key=key)
    return Annotation(
        difficulty=_coerce_level(obj["difficulty"], "difficulty"),
        quality=_coerce_level(obj["quality"], "quality"),
        tags=normalize_tags(obj["tags"]),
    )


def annotate(record: CuratedRecord, scorer: Endpoint, config: ScorerConfig) -> CuratedRecord:
    """One scorer call on the happy path, at most two after a JSON failure."""
    if record.status is not Status.DISTILLED:
        raise ValueError(f"annotate expects a distilled record, got {record.status.value}")
    request = render_scorer_prompt(record, config)
    reply = scorer.complete(request)
    try:
        annotation = extract_json_object(reply.text)
    except ScoreParseError as first:
        retry_reply = scorer.complete(render_reask_prompt(request))
        try:
            annotation = extract_json_object(retry_reply.text)
        except ScoreParseError as second:
            reason = RejectReason(
                code=RejectCode.BAD_SCORE_JSON,
                detail=f"{first.kind.value}, then {second.kind.value} on re-ask",
            )
            return record.advanced(status=Status.REJECTED, reject_reason=reason)
    return record.advanced(status=Status.ANNOTATED, annotation=annotation)
