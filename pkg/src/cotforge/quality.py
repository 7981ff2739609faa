"""Rule-based trace filtering with auditable reject reasons.

Checks run in a fixed order (format, length, placeholder, repetition,
instability) and the first failure wins, so reject statistics are comparable
across runs. Every check is a pure function of the record and the config.
"""

from __future__ import annotations

from dataclasses import dataclass

from .records import CuratedRecord, DistilledTrace, RejectCode, RejectReason, Status
from .tokens import tokenize

DEFAULT_PLACEHOLDER_LEXICON = (
    "[insert",
    "lorem ipsum",
    "your answer here",
    "todo",
)

DEFAULT_INSTABILITY_LEXICON = (
    "let me restart",
    "start over",
    "scratch that",
    "actually, no wait",
)

# below this many n-grams a text is too short to judge for repetition
_MIN_NGRAMS_TO_JUDGE = 20

# a restart marker this late in the trace suggests it never recovered
_FINAL_QUARTER = 0.75


@dataclass(frozen=True)
class Stage1Config:
    min_tokens: int = 20
    max_tokens: int = 4000
    repetition_ngram: int = 3
    repetition_max_ratio: float = 0.5
    placeholder_lexicon: tuple[str, ...] = DEFAULT_PLACEHOLDER_LEXICON
    instability_lexicon: tuple[str, ...] = DEFAULT_INSTABILITY_LEXICON

    def __post_init__(self) -> None:
        if not 0 < self.min_tokens < self.max_tokens:
            raise ValueError("need 0 < min_tokens < max_tokens")
        if not 0.0 < self.repetition_max_ratio <= 1.0:
            raise ValueError("repetition_max_ratio must be in (0, 1]")
        if self.repetition_ngram < 1:
            raise ValueError("repetition_ngram must be at least 1")


def trace_body(trace: DistilledTrace) -> str:
    """The text the content checks run over: reasoning plus final answer."""
    return f"{trace.think_text}\n{trace.answer_text}"


def check_length(trace: DistilledTrace, config: Stage1Config) -> RejectReason | None:
    # both bounds inclusive: a trace of exactly min or max tokens passes
    if trace.token_count < config.min_tokens:
        return RejectReason(RejectCode.TOO_SHORT, f"{trace.token_count} tokens < {config.min_tokens}")
    if trace.token_count > config.max_tokens:
        return RejectReason(RejectCode.TOO_LONG, f"{trace.token_count} tokens > {config.max_tokens}")
    return None


def detect_placeholder(text: str, config: Stage1Config) -> RejectReason | None:
    lowered = text.lower()
    for entry in config.placeholder_lexicon:
        if entry.lower() in lowered:
            return RejectReason(RejectCode.PLACEHOLDER, f"matched {entry!r}")
    return None


def detect_repetition(text: str, config: Stage1Config) -> RejectReason | None:
    tokens = tokenize(text)
    n = config.repetition_ngram
    total = len(tokens) - n + 1
    if total < _MIN_NGRAMS_TO_JUDGE:
        return None
    distinct = len({tuple(tokens[i : i + n]) for i in range(total)})
    fraction = 1.0 - distinct / total
    if fraction > config.repetition_max_ratio:
        return RejectReason(
            RejectCode.REPETITION,
            f"duplicate {n}-gram fraction {fraction:.3f} > {config.repetition_max_ratio}",
        )
    return None


def detect_instability(text: str, config: Stage1Config) -> RejectReason | None:
    """Two or more restart markers reject; so does a single marker near the end.

    A single mid-trace self-correction passes: it is not inherently a defect.
    """
    lowered = text.lower()
    positions: list[int] = []
    for entry in config.instability_lexicon:
        needle = entry.lower()
        start = lowered.find(needle)
        while start != -1:
            positions.append(start)
            start = lowered.find(needle, start + len(needle))
    if len(positions) >= 2:
        return RejectReason(RejectCode.UNSTABLE, f"{len(positions)} instability markers")
    if positions and positions[0] >= _FINAL_QUARTER * len(lowered):
        return RejectReason(RejectCode.UNSTABLE, "restart marker in the final quarter")
    return None


def stage1_filter(record: CuratedRecord, config: Stage1Config) -> CuratedRecord:
    """Apply the rule checks in fixed order; survivors keep their prior status."""
    if record.status not in (Status.DISTILLED, Status.ANNOTATED):
        raise ValueError(
            f"stage-1 filter expects distilled or annotated records, got {record.status.value}"
        )
    if record.trace is None:
        return record.advanced(
            status=Status.REJECTED,
            reject_reason=RejectReason(RejectCode.MISSING_TAGS, "no trace attached"),
        )
    body = trace_body(record.trace)
    reason = (
        check_length(record.trace, config)
        or detect_placeholder(body, config)
        or detect_repetition(body, config)
        or detect_instability(body, config)
    )
    if reason is not None:
        return record.advanced(status=Status.REJECTED, reject_reason=reason)
    return record


def load_lexicon(path) -> tuple[str, ...]:
    """Plain-text lexicon file: one entry per line, blanks and '#' lines skipped."""
    entries = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line and not line.startswith("#"):
                entries.append(line)
    return tuple(entries)
