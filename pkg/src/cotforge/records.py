"""Record data model and the line-oriented file format shared by every stage.

All types are immutable after construction; invariants are enforced in the
constructors so an invalid record can never reach serialization. Files are
UTF-8, one record per line, with a canonical key order so equal records
encode to identical bytes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator

from .hashing import sha256_hex


class RecordError(ValueError):
    """A record violates the data-model invariants."""

    def __init__(self, message: str, *, field_name: str | None = None):
        super().__init__(message)
        self.field_name = field_name


class DecodeError(RecordError):
    """A serialized line could not be turned into a valid record."""


class Status(str, Enum):
    SEEDED = "seeded"
    DISTILLED = "distilled"
    ANNOTATED = "annotated"
    ACCEPTED = "accepted"
    REJECTED = "rejected"


# Accepted and Rejected are both terminal, one step past Annotated.
_STATUS_RANK = {
    Status.SEEDED: 0,
    Status.DISTILLED: 1,
    Status.ANNOTATED: 2,
    Status.ACCEPTED: 3,
    Status.REJECTED: 3,
}


class RejectCode(str, Enum):
    MISSING_TAGS = "missing_tags"
    TOO_SHORT = "too_short"
    TOO_LONG = "too_long"
    PLACEHOLDER = "placeholder"
    REPETITION = "repetition"
    UNSTABLE = "unstable"
    BAD_SCORE_JSON = "bad_score_json"
    LOW_DIFFICULTY = "low_difficulty"
    NOT_SELECTED = "not_selected"


def _expect_str(payload: dict, key: str, *, optional: bool = False) -> str | None:
    value = payload.get(key)
    if value is None:
        if optional:
            return None
        raise DecodeError(f"missing required field {key!r}", field_name=key)
    if not isinstance(value, str):
        raise DecodeError(f"field {key!r} must be a string", field_name=key)
    return value


def _expect_int(payload: dict, key: str) -> int:
    value = payload.get(key)
    if value is None:
        raise DecodeError(f"missing required field {key!r}", field_name=key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise DecodeError(f"field {key!r} must be an integer", field_name=key)
    return value


@dataclass(frozen=True)
class SeedSample:
    """One raw pool record: an opaque image reference plus an instruction."""

    id: str
    source_dataset: str
    category: str
    image_ref: str
    instruction: str
    reference_answer: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise RecordError("seed id must be nonempty", field_name="id")
        if not self.category:
            raise RecordError("category must be nonempty", field_name="category")
        if not self.instruction.strip():
            raise RecordError("instruction must be nonempty", field_name="instruction")

    def to_payload(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "id": self.id,
            "source_dataset": self.source_dataset,
            "category": self.category,
            "image_ref": self.image_ref,
            "instruction": self.instruction,
        }
        if self.reference_answer is not None:
            payload["reference_answer"] = self.reference_answer
        return payload

    @staticmethod
    def from_payload(payload: dict) -> "SeedSample":
        return SeedSample(
            id=_expect_str(payload, "id") or "",
            source_dataset=_expect_str(payload, "source_dataset") or "",
            category=_expect_str(payload, "category") or "",
            image_ref=_expect_str(payload, "image_ref", optional=True) or "",
            instruction=_expect_str(payload, "instruction") or "",
            reference_answer=_expect_str(payload, "reference_answer", optional=True),
        )


@dataclass(frozen=True)
class DistilledTrace:
    """Parsed teacher output: reasoning text, final answer, and length metrics.

    ``token_count`` is computed over ``think_text`` by the pipeline tokenizer
    at parse time; decoding trusts the stored value so corpora produced with a
    substituted tokenizer stay readable.
    """

    think_text: str
    answer_text: str
    raw_text: str
    token_count: int
    stray_text: bool = False  # nonempty text found outside the two blocks

    def __post_init__(self) -> None:
        if self.token_count < 0:
            raise RecordError("token_count must be nonnegative", field_name="token_count")

    def to_payload(self) -> dict[str, Any]:
        return {
            "think_text": self.think_text,
            "answer_text": self.answer_text,
            "raw_text": self.raw_text,
            "token_count": self.token_count,
            "stray_text": self.stray_text,
        }

    @staticmethod
    def from_payload(payload: dict) -> "DistilledTrace":
        return DistilledTrace(
            think_text=_expect_str(payload, "think_text") or "",
            answer_text=_expect_str(payload, "answer_text") or "",
            raw_text=_expect_str(payload, "raw_text") or "",
            token_count=_expect_int(payload, "token_count"),
            stray_text=bool(payload.get("stray_text", False)),
        )


@dataclass(frozen=True)
class Annotation:
    """Scorer output: difficulty and quality on 1-5 scales plus semantic tags."""

    difficulty: int
    quality: int
    tags: tuple[str, ...]

    def __post_init__(self) -> None:
        for name, value in (("difficulty", self.difficulty), ("quality", self.quality)):
            if isinstance(value, bool) or not isinstance(value, int) or not 1 <= value <= 5:
                raise RecordError(f"{name} must be an integer in [1,5]", field_name=name)
        if not self.tags:
            raise RecordError("tags must be nonempty", field_name="tags")
        seen = set()
        for tag in self.tags:
            if not tag or tag != tag.strip() or tag != tag.lower():
                raise RecordError(
                    f"tag {tag!r} must be nonempty, lowercase, and stripped", field_name="tags"
                )
            if tag in seen:
                raise RecordError(f"duplicate tag {tag!r}", field_name="tags")
            seen.add(tag)

    def to_payload(self) -> dict[str, Any]:
        return {"difficulty": self.difficulty, "quality": self.quality, "tags": list(self.tags)}

    @staticmethod
    def from_payload(payload: dict) -> "Annotation":
        tags = payload.get("tags")
        if tags is None:
            raise DecodeError("missing required field 'tags'", field_name="tags")
        if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
            raise DecodeError("field 'tags' must be a list of strings", field_name="tags")
        return Annotation(
            difficulty=_expect_int(payload, "difficulty"),
            quality=_expect_int(payload, "quality"),
            tags=tuple(tags),
        )


@dataclass(frozen=True)
class RejectReason:
    code: RejectCode
    detail: str = ""

    def to_payload(self) -> dict[str, Any]:
        return {"code": self.code.value, "detail": self.detail}

    @staticmethod
    def from_payload(payload: dict) -> "RejectReason":
        raw = _expect_str(payload, "code")
        try:
            code = RejectCode(raw)
        except ValueError:
            raise DecodeError(f"unknown reject code {raw!r}", field_name="code") from None
        return RejectReason(code=code, detail=_expect_str(payload, "detail", optional=True) or "")


@dataclass(frozen=True)
class StageStamp:
    """Provenance entry appended by each stage a record flows through."""

    stage: str
    config_hash: str
    timestamp: str = ""

    def to_payload(self) -> dict[str, Any]:
        return {"stage": self.stage, "config_hash": self.config_hash, "timestamp": self.timestamp}

    @staticmethod
    def from_payload(payload: dict) -> "StageStamp":
        return StageStamp(
            stage=_expect_str(payload, "stage") or "",
            config_hash=_expect_str(payload, "config_hash", optional=True) or "",
            timestamp=_expect_str(payload, "timestamp", optional=True) or "",
        )


@dataclass(frozen=True)
class CuratedRecord:
    """The pipeline's unit of work: seed plus trace, annotation, and status."""

    seed: SeedSample
    trace: DistilledTrace | None = None
    annotation: Annotation | None = None
    status: Status = Status.SEEDED
    reject_reason: RejectReason | None = None
    provenance: tuple[StageStamp, ...] = ()

    def __post_init__(self) -> None:
        if (self.status is Status.REJECTED) != (self.reject_reason is not None):
            raise RecordError(
                "reject_reason must be present exactly when status is rejected",
                field_name="reject_reason",
            )

    @property
    def record_id(self) -> str:
        return self.seed.id

    def advanced(self, *, status: Status, stamp: StageStamp | None = None, **changes: Any) -> "CuratedRecord":
        """Move the record forward; a record never moves back to an earlier status."""
        backward = _STATUS_RANK[status] < _STATUS_RANK[self.status]
        terminal_flip = self.status in (Status.ACCEPTED, Status.REJECTED) and status is not self.status
        if backward or terminal_flip:
            raise RecordError(
                f"cannot move a {self.status.value} record to {status.value}", field_name="status"
            )
        provenance = self.provenance + ((stamp,) if stamp is not None else ())
        return replace(self, status=status, provenance=provenance, **changes)

    def to_payload(self) -> dict[str, Any]:
        payload: dict[str, Any] = {"seed": self.seed.to_payload(), "status": self.status.value}
        if self.trace is not None:
            payload["trace"] = self.trace.to_payload()
        if self.annotation is not None:
            payload["annotation"] = self.annotation.to_payload()
        if self.reject_reason is not None:
            payload["reject_reason"] = self.reject_reason.to_payload()
        if self.provenance:
            payload["provenance"] = [s.to_payload() for s in self.provenance]
        return payload

    @staticmethod
    def from_payload(payload: dict) -> "CuratedRecord":
        seed_payload = payload.get("seed")
        if not isinstance(seed_payload, dict):
            raise DecodeError("missing or invalid 'seed' object", field_name="seed")
        raw_status = _expect_str(payload, "status")
        try:
            status = Status(raw_status)
        except ValueError:
            raise DecodeError(f"unknown status {raw_status!r}", field_name="status") from None

        trace_payload = payload.get("trace")
        annotation_payload = payload.get("annotation")
        reject_payload = payload.get("reject_reason")
        provenance_payload = payload.get("provenance", [])
        if not isinstance(provenance_payload, list):
            raise DecodeError("field 'provenance' must be a list", field_name="provenance")

        return CuratedRecord(
            seed=SeedSample.from_payload(seed_payload),
            trace=DistilledTrace.from_payload(trace_payload) if isinstance(trace_payload, dict) else None,
            annotation=(
                Annotation.from_payload(annotation_payload)
                if isinstance(annotation_payload, dict)
                else None
            ),
            status=status,
            reject_reason=(
                RejectReason.from_payload(reject_payload) if isinstance(reject_payload, dict) else None
            ),
            provenance=tuple(
                StageStamp.from_payload(p) for p in provenance_payload if isinstance(p, dict)
            ),
        )


def encode_record(record: CuratedRecord) -> str:
    """Serialize one record to its canonical newline-free line."""
    line = json.dumps(record.to_payload(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    try:
        line.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise RecordError(f"record text is not valid UTF-8: {exc}") from exc
    return line


def decode_record(line: str) -> CuratedRecord:
    """Parse one line; unknown fields are ignored for forward compatibility."""
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"malformed line: {exc}") from exc
    if not isinstance(payload, dict):
        raise DecodeError("line is not a JSON object")
    try:
        return CuratedRecord.from_payload(payload)
    except DecodeError:
        raise
    except RecordError as exc:
        raise DecodeError(str(exc), field_name=exc.field_name) from exc


def stable_id(source_dataset: str, native_key: str) -> str:
    """Deterministic, collision-resistant id; stable across runs and machines."""
    if not source_dataset:
        raise RecordError("source_dataset must be nonempty", field_name="source_dataset")
    if not native_key:
        raise RecordError("native_key must be nonempty", field_name="native_key")
    return sha256_hex(f"{source_dataset}\x1f{native_key}")[:32]


def stream_records(path: str | Path) -> Iterator[CuratedRecord]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield decode_record(line)
            except DecodeError as exc:
                raise DecodeError(f"{path}:{lineno}: {exc}", field_name=exc.field_name) from exc


def load_records(path: str | Path) -> list[CuratedRecord]:
    return list(stream_records(path))


def write_records(path: str | Path, records: Iterable[CuratedRecord], *, atomic: bool = True) -> int:
    """Write records one per line; with ``atomic`` the file appears all at once."""
    path = Path(path)
    target = path.with_name(path.name + ".tmp") if atomic else path
    count = 0
    with target.open("w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(encode_record(record))
            handle.write("\n")
            count += 1
    if atomic:
        os.replace(target, path)
    return count


@dataclass(frozen=True)
class PipelineManifest:
    """Per-stage accounting: counts, reject tallies, and the config stamp."""

    run_id: str
    stage: str
    config_hash: str
    input_count: int
    output_count: int
    reject_counts: dict[str, int]
    random_seed: int

    def __post_init__(self) -> None:
        for name, value in (("input_count", self.input_count), ("output_count", self.output_count)):
            if value < 0:
                raise RecordError(f"{name} must be nonnegative", field_name=name)
        if any(v < 0 for v in self.reject_counts.values()):
            raise RecordError("reject counts must be nonnegative", field_name="reject_counts")

    def check_conservation(self) -> None:
        total = self.output_count + sum(self.reject_counts.values())
        if total != self.input_count:
            raise RecordError(
                f"stage {self.stage}: outputs {self.output_count} + rejects "
                f"{sum(self.reject_counts.values())} != inputs {self.input_count}"
            )

    def to_payload(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "stage": self.stage,
            "config_hash": self.config_hash,
            "input_count": self.input_count,
            "output_count": self.output_count,
            "reject_counts": dict(sorted(self.reject_counts.items())),
            "random_seed": self.random_seed,
        }

    @staticmethod
    def from_payload(payload: dict) -> "PipelineManifest":
        rejects = payload.get("reject_counts", {})
        if not isinstance(rejects, dict):
            raise DecodeError("field 'reject_counts' must be an object", field_name="reject_counts")
        return PipelineManifest(
            run_id=_expect_str(payload, "run_id") or "",
            stage=_expect_str(payload, "stage") or "",
            config_hash=_expect_str(payload, "config_hash") or "",
            input_count=_expect_int(payload, "input_count"),
            output_count=_expect_int(payload, "output_count"),
            reject_counts={str(k): int(v) for k, v in rejects.items()},
            random_seed=_expect_int(payload, "random_seed"),
        )

    def save(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_payload(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, path)

    @staticmethod
    def load(path: str | Path) -> "PipelineManifest":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return PipelineManifest.from_payload(payload)
