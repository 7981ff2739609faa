"""Teacher prompt construction, structured trace parsing, and the distill step."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .gateway import ChatMessage, ChatRequest, Endpoint
from .records import CuratedRecord, DistilledTrace, RejectCode, RejectReason, Status
from .tokens import count_tokens, tokenize

__all__ = [
    "TEACHER_SYSTEM_PROMPT",
    "TEACHER_QUERY_TEMPLATE",
    "TeacherConfig",
    "TraceErrorKind",
    "TraceParseError",
    "render_teacher_prompt",
    "parse_structured_trace",
    "count_tokens",
    "tokenize",
    "distill",
]

TEACHER_SYSTEM_PROMPT = (
    "You are a helpful assistant to think step by step. Provide your reasoning steps "
    "within <think></think> tags and give your final answer within <answer></answer> tags."
)

# The output-format block is reproduced exactly as shipped, including the
# literal "/<think>" closing line; teacher endpoints are prompted with these
# bytes verbatim.
TEACHER_QUERY_TEMPLATE = """### Image
<image>
### Question
{question}
### Output Format (Strictly Enforced)
<think>
Clearly explain your reasoning step by step. Describe how you arrived at the conclusion. The reasoning process MUST BE enclosed within <think> </think> tags.
/<think>
<answer>
Your final answer to the user's question.
</answer>"""


@dataclass(frozen=True)
class TeacherConfig:
    model_name: str = "teacher"
    temperature: float = 0.5
    max_output_tokens: int = 8192
    system_prompt: str = TEACHER_SYSTEM_PROMPT


def render_teacher_prompt(sample, config: TeacherConfig) -> ChatRequest:
    """Pure render; the image reference rides along as a content part."""
    user_text = TEACHER_QUERY_TEMPLATE.format(question=sample.instruction)
    return ChatRequest(
        model_name=config.model_name,
        messages=(
            ChatMessage(role="system", text=config.system_prompt),
            ChatMessage(role="user", text=user_text, image_ref=sample.image_ref or None),
        ),
        temperature=config.temperature,
        max_output_tokens=config.max_output_tokens,
    )


class TraceErrorKind(str, Enum):
    MISSING_THINK = "missing_think"
    MISSING_ANSWER = "missing_answer"
    DUPLICATE_BLOCK = "duplicate_block"
    ANSWER_BEFORE_THINK = "answer_before_think"
    UNCLOSED_TAG = "unclosed_tag"
    STRAY_TEXT = "stray_text"  # strict mode only


class TraceParseError(ValueError):
    def __init__(self, kind: TraceErrorKind, message: str):
        super().__init__(message)
        self.kind = kind


_THINK_OPEN = "<think>"
_THINK_CLOSE = "</think>"
_ANSWER_OPEN = "<answer>"
_ANSWER_CLOSE = "</answer>"


def _find_all(text: str, needle: str) -> list[int]:
    positions: list[int] = []
    start = text.find(needle)
    while start != -1:
        positions.append(start)
        start = text.find(needle, start + 1)
    return positions


def parse_structured_trace(raw: str, *, strict: bool = False) -> DistilledTrace:
    """Extract the single think/answer block pair from raw teacher output.

    Verdict precedence for malformed input: a fully absent think pair, then a
    fully absent answer pair, then duplicated tags, then unclosed or inverted
    pairs, then an answer block that does not strictly follow the think block.
    Text outside the two blocks is tolerated and flagged unless ``strict``.
    """
    think_opens = _find_all(raw, _THINK_OPEN)
    think_closes = _find_all(raw, _THINK_CLOSE)
    answer_opens = _find_all(raw, _ANSWER_OPEN)
    answer_closes = _find_all(raw, _ANSWER_CLOSE)

    if not think_opens and not think_closes:
        raise TraceParseError(TraceErrorKind.MISSING_THINK, "no think block found")
    if not answer_opens and not answer_closes:
        raise TraceParseError(TraceErrorKind.MISSING_ANSWER, "no answer block found")
    if max(len(think_opens), len(think_closes), len(answer_opens), len(answer_closes)) > 1:
        raise TraceParseError(TraceErrorKind.DUPLICATE_BLOCK, "a block tag appears more than once")
    if len(think_opens) != len(think_closes):
        raise TraceParseError(TraceErrorKind.UNCLOSED_TAG, "think block is not properly closed")
    if len(answer_opens) != len(answer_closes):
        raise TraceParseError(TraceErrorKind.UNCLOSED_TAG, "answer block is not properly closed")

    t_open, t_close = think_opens[0], think_closes[0]
    a_open, a_close = answer_opens[0], answer_closes[0]
    if t_close < t_open:
        raise TraceParseError(TraceErrorKind.UNCLOSED_TAG, "think close tag precedes its open tag")
    if a_close < a_open:
        raise TraceParseError(TraceErrorKind.UNCLOSED_TAG, "answer close tag precedes its open tag")
    if a_open < t_close:
        raise TraceParseError(
            TraceErrorKind.ANSWER_BEFORE_THINK, "answer block does not follow the think block"
        )

    think_text = raw[t_open + len(_THINK_OPEN) : t_close].strip()
    answer_text = raw[a_open + len(_ANSWER_OPEN) : a_close].strip()
    outside = (
        raw[:t_open]
        + raw[t_close + len(_THINK_CLOSE) : a_open]
        + raw[a_close + len(_ANSWER_CLOSE) :]
    )
    stray = bool(outside.strip())
    if strict and stray:
        raise TraceParseError(TraceErrorKind.STRAY_TEXT, "text found outside the think/answer blocks")
    return DistilledTrace(
        think_text=think_text,
        answer_text=answer_text,
        raw_text=raw,
        token_count=count_tokens(think_text),
        stray_text=stray,
    )


def distill(
    record: CuratedRecord,
    teacher: Endpoint,
    config: TeacherConfig,
    *,
    strict_format: bool = False,
) -> CuratedRecord:
    """Generate a trace for a seeded record; a malformed reply rejects it.

    Gateway errors propagate so the stage can fail and be resumed; the record
    only advances once a reply was actually parsed.
    """
    if record.status is not Status.SEEDED:
        raise ValueError(f"distill expects a seeded record, got {record.status.value}")
    request = render_teacher_prompt(record.seed, config)
    response = teacher.complete(request)
    try:
        trace = parse_structured_trace(response.text, strict=strict_format)
    except TraceParseError as exc:
        reason = RejectReason(code=RejectCode.MISSING_TAGS, detail=f"{exc.kind.value}: {exc}")
        return record.advanced(status=Status.REJECTED, reject_reason=reason)
    return record.advanced(status=Status.DISTILLED, trace=trace)
