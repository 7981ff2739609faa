"""Corpus statistics: score distributions, tag frequencies, report rendering."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

from .hashing import canonical_json
from .records import CuratedRecord, PipelineManifest, Status


def _round2(numerator: int, denominator: int) -> float:
    """Percentage with half-up rounding to two decimals."""
    value = Decimal(numerator) * 100 / Decimal(denominator)
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _require_scored(records: Sequence[CuratedRecord]) -> None:
    for record in records:
        if record.status not in (Status.ANNOTATED, Status.ACCEPTED) or record.annotation is None:
            raise ValueError(
                f"record {record.record_id} has no annotation (status {record.status.value})"
            )


@dataclass(frozen=True)
class DistributionReport:
    """Counts and percentages per level for one score axis; zero levels omitted."""

    axis: str
    total: int
    counts: dict[int, int]
    percentages: dict[int, float]

    def to_payload(self) -> dict:
        return {
            "axis": self.axis,
            "total": self.total,
            "counts": {str(k): v for k, v in sorted(self.counts.items())},
            "percentages": {str(k): v for k, v in sorted(self.percentages.items())},
        }

    @staticmethod
    def from_payload(payload: dict) -> "DistributionReport":
        return DistributionReport(
            axis=str(payload["axis"]),
            total=int(payload["total"]),
            counts={int(k): int(v) for k, v in payload["counts"].items()},
            percentages={int(k): float(v) for k, v in payload["percentages"].items()},
        )


def compute_distribution(records: Iterable[CuratedRecord], axis: str) -> DistributionReport:
    if axis not in ("difficulty", "quality"):
        raise ValueError(f"unknown axis {axis!r}")
    records = list(records)
    if not records:
        raise ValueError("empty corpus: percentages are undefined")
    _require_scored(records)
    counts: Counter[int] = Counter(getattr(r.annotation, axis) for r in records)
    total = len(records)
    return DistributionReport(
        axis=axis,
        total=total,
        counts=dict(sorted(counts.items())),
        percentages={level: _round2(count, total) for level, count in sorted(counts.items())},
    )


@dataclass(frozen=True)
class TagFrequencyEntry:
    tag: str
    count: int
    fraction: float

    def to_payload(self) -> dict:
        return {"tag": self.tag, "count": self.count, "fraction": self.fraction}


@dataclass(frozen=True)
class TagFrequencyReport:
    """Per-tag record counts (presence, not multiplicity), most frequent first."""

    entries: tuple[TagFrequencyEntry, ...]
    top_n: int
    total_records: int

    def to_payload(self) -> dict:
        return {
            "top_n": self.top_n,
            "total_records": self.total_records,
            "entries": [e.to_payload() for e in self.entries],
        }

    @staticmethod
    def from_payload(payload: dict) -> "TagFrequencyReport":
        return TagFrequencyReport(
            entries=tuple(
                TagFrequencyEntry(str(e["tag"]), int(e["count"]), float(e["fraction"]))
                for e in payload["entries"]
            ),
            top_n=int(payload["top_n"]),
            total_records=int(payload["total_records"]),
        )


def compute_tag_frequency(records: Iterable[CuratedRecord], top_n: int) -> TagFrequencyReport:
    if top_n < 1:
        raise ValueError("top_n must be at least 1")
    records = list(records)
    _require_scored(records)
    counts: Counter[str] = Counter()
    for record in records:
        # a record counts once per tag it carries, so shares can sum past 100%
        counts.update(set(record.annotation.tags))
    total = len(records)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))[:top_n]
    entries = tuple(
        TagFrequencyEntry(tag=tag, count=count, fraction=count / total if total else 0.0)
        for tag, count in ranked
    )
    return TagFrequencyReport(entries=entries, top_n=top_n, total_records=total)


@dataclass(frozen=True)
class ReportBundle:
    difficulty: DistributionReport | None = None
    quality: DistributionReport | None = None
    tags: TagFrequencyReport | None = None
    manifests: tuple[PipelineManifest, ...] = ()

    def to_payload(self) -> dict:
        return {
            "difficulty": self.difficulty.to_payload() if self.difficulty else None,
            "quality": self.quality.to_payload() if self.quality else None,
            "tags": self.tags.to_payload() if self.tags else None,
            "manifests": [m.to_payload() for m in self.manifests],
        }

    @staticmethod
    def from_payload(payload: dict) -> "ReportBundle":
        return ReportBundle(
            difficulty=(
                DistributionReport.from_payload(payload["difficulty"])
                if payload.get("difficulty")
                else None
            ),
            quality=(
                DistributionReport.from_payload(payload["quality"]) if payload.get("quality") else None
            ),
            tags=TagFrequencyReport.from_payload(payload["tags"]) if payload.get("tags") else None,
            manifests=tuple(
                PipelineManifest.from_payload(m) for m in payload.get("manifests", [])
            ),
        )


def _distribution_table(report: DistributionReport) -> list[str]:
    lines = ["| Level | Count | Percent |", "| --- | --- | --- |"]
    for level in sorted(report.counts):
        lines.append(f"| {level} | {report.counts[level]} | {report.percentages[level]:.2f} |")
    return lines


def render_report(bundle: ReportBundle, format: str = "structured") -> str:
    """Render reports; the structured form round-trips through decode_report."""
    if format == "structured":
        return canonical_json(bundle.to_payload())
    if format != "markdown":
        raise ValueError(f"unknown report format {format!r}")

    lines: list[str] = ["# Corpus report", ""]
    for report in (bundle.difficulty, bundle.quality):
        if report is None:
            continue
        lines.append(f"## {report.axis.capitalize()} distribution ({report.total} records)")
        lines.append("")
        lines.extend(_distribution_table(report))
        lines.append("")
    if bundle.tags is not None:
        lines.append(f"## Tag frequency (top {bundle.tags.top_n})")
        lines.append("")
        lines.append("| Tag | Records | Share |")
        lines.append("| --- | --- | --- |")
        for entry in bundle.tags.entries:
            lines.append(f"| {entry.tag} | {entry.count} | {100 * entry.fraction:.2f}% |")
        lines.append("")
    if bundle.manifests:
        lines.append("## Stage manifests")
        lines.append("")
        lines.append("| Stage | Input | Output | Rejects |")
        lines.append("| --- | --- | --- | --- |")
        for manifest in bundle.manifests:
            rejects = ", ".join(f"{k}: {v}" for k, v in sorted(manifest.reject_counts.items()))
            lines.append(
                f"| {manifest.stage} | {manifest.input_count} | {manifest.output_count} | {rejects or '-'} |"
            )
        lines.append("")
    return "\n".join(lines)


def decode_report(text: str) -> ReportBundle:
    return ReportBundle.from_payload(json.loads(text))
