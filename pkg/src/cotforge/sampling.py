"""Seed-pool ingestion and per-category capped stratified sampling.

Sampling is reservoir-based per category so the pool never has to fit in
memory; each category draws from its own seeded stream, which makes the
selection deterministic for a fixed pool order and seed.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .hashing import derive_seed
from .records import DecodeError, RecordError, SeedSample, decode_record, stable_id


class IngestError(ValueError):
    """A pool file could not be ingested; the message carries file and line."""


@dataclass(frozen=True)
class SamplingPlan:
    per_category_cap: int = 20000
    target_total: int | None = None
    random_seed: int = 0

    def __post_init__(self) -> None:
        if self.per_category_cap < 1:
            raise ValueError("per_category_cap must be at least 1")
        if self.target_total is not None and self.target_total < 1:
            raise ValueError("target_total must be at least 1 when set")


def _seed_from_bare(obj: dict, default_source: str) -> SeedSample:
    source = str(obj.get("source_dataset") or default_source)
    explicit_id = obj.get("id")
    if explicit_id:
        sample_id = str(explicit_id)
    else:
        native = obj.get("native_key")
        if not native:
            native = f"{obj.get('instruction', '')}\x1f{obj.get('image_ref', '')}"
        sample_id = stable_id(source, str(native))
    return SeedSample(
        id=sample_id,
        source_dataset=source,
        category=str(obj.get("category", "")),
        image_ref=str(obj.get("image_ref", "") or ""),
        instruction=str(obj.get("instruction", "")),
        reference_answer=(
            str(obj["reference_answer"]) if obj.get("reference_answer") is not None else None
        ),
    )


def ingest(paths: Iterable[str | Path]) -> Iterator[SeedSample]:
    """Stream validated seed samples from pool files.

    Accepts the pipeline's own record lines as well as bare seed objects
    (``instruction`` plus optional id/category metadata). Duplicate ids are an
    error: the pool is the identity namespace for the whole run.
    """
    seen: dict[str, str] = {}
    for path in paths:
        path = Path(path)
        with path.open("r", encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                where = f"{path}:{lineno}"
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise IngestError(f"{where}: not valid JSON: {exc}") from exc
                if not isinstance(obj, dict):
                    raise IngestError(f"{where}: line is not a JSON object")
                try:
                    if "seed" in obj and "status" in obj:
                        sample = decode_record(line).seed
                    elif "instruction" in obj:
                        sample = _seed_from_bare(obj, default_source=path.stem)
                    else:
                        raise IngestError(f"{where}: unrecognized line shape")
                    # payload construction may surface invariant violations
                except (DecodeError, RecordError) as exc:
                    raise IngestError(f"{where}: {exc}") from exc
                if sample.id in seen:
                    raise IngestError(
                        f"{where}: duplicate id {sample.id!r} (first seen at {seen[sample.id]})"
                    )
                seen[sample.id] = where
                yield sample


def _largest_remainder(sizes: dict[str, int], target: int) -> dict[str, int]:
    # integer quotas keep the allocation exact and tie handling deterministic
    total = sum(sizes.values())
    floors = {c: target * n // total for c, n in sizes.items()}
    remainders = {c: target * n % total for c, n in sizes.items()}
    leftover = target - sum(floors.values())
    for category in sorted(sizes, key=lambda c: (-remainders[c], c))[:leftover]:
        floors[category] += 1
    return floors


def stratified_sample(pool: Iterable[SeedSample], plan: SamplingPlan) -> list[SeedSample]:
    """Uniformly sample up to the cap per category, then honor ``target_total``.

    When the capped union exceeds the target, categories are downsampled
    proportionally to their capped sizes with largest-remainder rounding.
    Output is sorted by id.
    """
    reservoirs: dict[str, list[SeedSample]] = {}
    counts: dict[str, int] = {}
    rngs: dict[str, random.Random] = {}
    for sample in pool:
        category = sample.category
        if category not in reservoirs:
            reservoirs[category] = []
            counts[category] = 0
            rngs[category] = random.Random(derive_seed("reservoir", plan.random_seed, category))
        index = counts[category]
        counts[category] += 1
        reservoir = reservoirs[category]
        if index < plan.per_category_cap:
            reservoir.append(sample)
        else:
            slot = rngs[category].randint(0, index)
            if slot < plan.per_category_cap:
                reservoir[slot] = sample

    quotas = {c: len(r) for c, r in reservoirs.items()}
    if plan.target_total is not None and sum(quotas.values()) > plan.target_total:
        quotas = _largest_remainder(quotas, plan.target_total)

    selected: list[SeedSample] = []
    for category, reservoir in reservoirs.items():
        quota = quotas[category]
        if quota < len(reservoir):
            rng = random.Random(derive_seed("downsample", plan.random_seed, category))
            reservoir = rng.sample(sorted(reservoir, key=lambda s: s.id), quota)
        selected.extend(reservoir)
    selected.sort(key=lambda s: s.id)
    return selected
