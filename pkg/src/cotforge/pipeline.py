"""Stage orchestration: run, resume, manifests, and crash-safe stage outputs.

Every stage writes to a scratch file and renames atomically, so a consumed
stage output is always complete. The two gateway-bound stages additionally
keep a ``.partial`` checkpoint and skip records already finished, which makes
an interrupted run resumable without repeating model calls.
"""

from __future__ import annotations

import logging
import os
from collections import Counter, deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator

from .annotate import annotate
from .config import ConfigError, RunConfig, config_hash
from .distill import distill
from .gateway import Endpoint, Gateway, HttpTransport
from .hashing import derive_seed
from .mock_gateway import InProcessTransport, MockModelService
from .quality import stage1_filter
from .records import (
    CuratedRecord,
    DecodeError,
    PipelineManifest,
    RejectCode,
    RejectReason,
    StageStamp,
    Status,
    decode_record,
    encode_record,
    load_records,
    write_records,
)
from .sampling import SamplingPlan, ingest, stratified_sample
from .selection import build_tag_cluster_model, diversify_ids, select_by_strategy, strategy_reject_reason
from .stats import ReportBundle, compute_distribution, compute_tag_frequency, render_report

logger = logging.getLogger(__name__)

STAGE_ORDER = ("sample", "distill", "score", "filter", "select", "diversify", "stats")

STAGE_ARTIFACTS: dict[str, tuple[str, ...]] = {
    "sample": ("sampled.jsonl",),
    "distill": ("traced.jsonl",),
    "score": ("scored.jsonl",),
    "filter": ("kept.jsonl", "rejects_stage1.jsonl"),
    "select": ("selected.jsonl", "rejects_stage2.jsonl"),
    "diversify": ("corpus.jsonl", "rejects_stage3.jsonl"),
    "stats": ("report.json", "report.md"),
}


class StageFailure(RuntimeError):
    """A stage aborted; earlier outputs stay intact and the run can resume."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class ResumeError(RuntimeError):
    pass


class ConfigHashMismatch(ResumeError):
    """Existing artifacts were produced under a different configuration."""


class MissingArtifact(ResumeError):
    """A stage needed for resume has no output or manifest on disk."""


@dataclass
class RunContext:
    config: RunConfig
    config_digest: str
    run_id: str
    gateway: Gateway | None

    @classmethod
    def create(cls, config: RunConfig, gateway: Gateway | None = None) -> "RunContext":
        digest = config_hash(config)
        run_id = config.run_id or f"run-{digest[:12]}"
        return cls(config=config, config_digest=digest, run_id=run_id, gateway=gateway)

    @property
    def workdir(self) -> Path:
        return Path(self.config.workdir)

    def path(self, name: str) -> Path:
        return self.workdir / name

    def manifest_path(self, stage: str) -> Path:
        return self.workdir / f"manifest_{stage}.json"

    def stamp(self, stage: str) -> StageStamp:
        return StageStamp(
            stage=stage, config_hash=self.config_digest, timestamp=self.config.provenance_stamp
        )

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.config.seed, stage)

    def require_gateway(self) -> Gateway:
        if self.gateway is None:
            self.gateway = build_gateway(self.config)
        return self.gateway


def build_gateway(config: RunConfig) -> Gateway:
    if config.mock:
        service = MockModelService(config.mock_fixtures, embedding_dim=config.mock_embedding_dim)
        transport = InProcessTransport(service)

        def endpoint(model: str) -> Endpoint:
            return Endpoint(
                transport=transport, model_name=model, retry=config.retry, sleep=lambda _: None
            )

        return Gateway(
            teacher=endpoint(config.teacher.model_name or "mock-teacher"),
            scorer=endpoint(config.scorer.model_name or "mock-scorer"),
            embedder=endpoint(config.embedder_endpoint.model or "mock-embedder"),
        )

    def http_endpoint(spec_url: str, model: str) -> Endpoint:
        if not spec_url:
            raise ConfigError("endpoint base_url missing (set endpoints.* or mock: true)")
        return Endpoint(
            transport=HttpTransport(base_url=spec_url, api_key_env=config.credential_env),
            model_name=model,
            retry=config.retry,
        )

    return Gateway(
        teacher=http_endpoint(config.teacher_endpoint.base_url, config.teacher.model_name),
        scorer=http_endpoint(config.scorer_endpoint.base_url, config.scorer.model_name),
        embedder=http_endpoint(config.embedder_endpoint.base_url, config.embedder_endpoint.model),
    )


def map_ordered(items: Iterable, fn: Callable, workers: int) -> Iterator:
    """Bounded fan-out that yields results in input order."""
    if workers <= 1:
        for item in items:
            yield fn(item)
        return
    window = workers * 4
    with ThreadPoolExecutor(max_workers=workers) as executor:
        pending: deque[Future] = deque()
        for item in items:
            pending.append(executor.submit(fn, item))
            if len(pending) >= window:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()


def _tally(records: Iterable[CuratedRecord]) -> tuple[int, int, dict[str, int]]:
    total = 0
    survivors = 0
    rejects: Counter[str] = Counter()
    for record in records:
        total += 1
        if record.status is Status.REJECTED and record.reject_reason is not None:
            rejects[record.reject_reason.code.value] += 1
        else:
            survivors += 1
    return total, survivors, dict(rejects)


def _write_manifest(ctx: RunContext, stage: str, input_count: int, output_count: int,
                    reject_counts: dict[str, int], *, conserve: bool = True) -> PipelineManifest:
    manifest = PipelineManifest(
        run_id=ctx.run_id,
        stage=stage,
        config_hash=ctx.config_digest,
        input_count=input_count,
        output_count=output_count,
        reject_counts=reject_counts,
        random_seed=ctx.stage_seed(stage),
    )
    if conserve:
        manifest.check_conservation()
    manifest.save(ctx.manifest_path(stage))
    return manifest


def _salvage_partial(partial: Path, input_ids: list[str]) -> list[CuratedRecord]:
    """Completed prefix of a checkpoint file, or nothing if it does not line up."""
    if not partial.exists():
        return []
    done: list[CuratedRecord] = []
    with partial.open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            try:
                done.append(decode_record(line))
            except DecodeError:
                break  # truncated tail from an interrupted write
    if len(done) > len(input_ids):
        return []
    for record, expected in zip(done, input_ids):
        if record.record_id != expected:
            return []
    return done


def _gateway_stage(
    ctx: RunContext, stage: str, in_path: Path, out_path: Path, fn: Callable[[CuratedRecord], CuratedRecord]
) -> list[CuratedRecord]:
    """Run a per-record model stage with an append-only checkpoint."""
    records_in = load_records(in_path)
    input_ids = [r.record_id for r in records_in]
    partial = out_path.with_name(out_path.name + ".partial")
    done = _salvage_partial(partial, input_ids)
    if done:
        logger.info("stage %s: resuming after %d completed records", stage, len(done))

    mode = "a" if done else "w"
    remaining = records_in[len(done) :]
    out_records = list(done)
    with partial.open(mode, encoding="utf-8", newline="\n") as handle:
        if mode == "w":
            for record in done:
                handle.write(encode_record(record) + "\n")
        for record in map_ordered(remaining, fn, ctx.config.concurrency):
            handle.write(encode_record(record) + "\n")
            handle.flush()
            out_records.append(record)
    os.replace(partial, out_path)
    total, survivors, rejects = _tally(out_records)
    _write_manifest(ctx, stage, len(records_in), survivors, rejects)
    return out_records


def _stage_sample(ctx: RunContext, out_path: Path | None = None) -> None:
    if not ctx.config.inputs:
        raise ConfigError("no input pool files configured")
    out_path = out_path or ctx.path("sampled.jsonl")
    plan = SamplingPlan(
        per_category_cap=ctx.config.sampling.per_category_cap,
        target_total=ctx.config.sampling.target_total,
        random_seed=ctx.stage_seed("sample"),
    )
    pool_count = 0

    def counted():
        nonlocal pool_count
        for sample in ingest(ctx.config.inputs):
            pool_count += 1
            yield sample

    stamp = ctx.stamp("sample")
    selected = stratified_sample(counted(), plan)
    records = [CuratedRecord(seed=s, provenance=(stamp,)) for s in selected]
    write_records(out_path, records)
    _write_manifest(ctx, "sample", pool_count, len(records), {}, conserve=False)


def _stage_distill(ctx: RunContext, in_path: Path | None = None, out_path: Path | None = None) -> None:
    gateway = ctx.require_gateway()
    stamp = ctx.stamp("distill")

    def step(record: CuratedRecord) -> CuratedRecord:
        if record.status is Status.SEEDED:
            record = distill(record, gateway.teacher, ctx.config.teacher)
        return record.advanced(status=record.status, stamp=stamp)

    _gateway_stage(
        ctx, "distill", in_path or ctx.path("sampled.jsonl"), out_path or ctx.path("traced.jsonl"), step
    )


def _stage_score(ctx: RunContext, in_path: Path | None = None, out_path: Path | None = None) -> None:
    gateway = ctx.require_gateway()
    stamp = ctx.stamp("score")

    def step(record: CuratedRecord) -> CuratedRecord:
        if record.status is Status.DISTILLED:
            record = annotate(record, gateway.scorer, ctx.config.scorer)
        return record.advanced(status=record.status, stamp=stamp)

    _gateway_stage(
        ctx, "score", in_path or ctx.path("traced.jsonl"), out_path or ctx.path("scored.jsonl"), step
    )


def _stage_filter(
    ctx: RunContext,
    in_path: Path | None = None,
    out_path: Path | None = None,
    rejects_path: Path | None = None,
) -> None:
    in_path = in_path or ctx.path("scored.jsonl")
    out_path = out_path or ctx.path("kept.jsonl")
    rejects_path = rejects_path or ctx.path("rejects_stage1.jsonl")
    stamp = ctx.stamp("filter")
    kept: list[CuratedRecord] = []
    rejected: list[CuratedRecord] = []
    for record in load_records(in_path):
        if record.status is Status.REJECTED:
            rejected.append(record.advanced(status=record.status, stamp=stamp))
            continue
        result = stage1_filter(record, ctx.config.stage1)
        result = result.advanced(status=result.status, stamp=stamp)
        (rejected if result.status is Status.REJECTED else kept).append(result)
    write_records(out_path, kept)
    write_records(rejects_path, rejected)
    total, survivors, reject_counts = _tally(kept + rejected)
    _write_manifest(ctx, "filter", total, survivors, reject_counts)


def _stage_select(
    ctx: RunContext,
    in_path: Path | None = None,
    out_path: Path | None = None,
    rejects_path: Path | None = None,
) -> None:
    in_path = in_path or ctx.path("kept.jsonl")
    out_path = out_path or ctx.path("selected.jsonl")
    rejects_path = rejects_path or ctx.path("rejects_stage2.jsonl")
    stamp = ctx.stamp("select")
    records = load_records(in_path)
    strategy = ctx.config.subset.strategy
    kept = select_by_strategy(records, strategy, ctx.stage_seed("select"))
    kept_ids = {r.record_id for r in kept}
    kept_out = [r.advanced(status=r.status, stamp=stamp) for r in kept]
    rejected = [
        r.advanced(
            status=Status.REJECTED, reject_reason=strategy_reject_reason(r, strategy), stamp=stamp
        )
        for r in records
        if r.record_id not in kept_ids
    ]
    write_records(out_path, kept_out)
    write_records(rejects_path, sorted(rejected, key=lambda r: r.record_id))
    total, survivors, reject_counts = _tally(kept_out + rejected)
    _write_manifest(ctx, "select", total, survivors, reject_counts)


def _stage_diversify(
    ctx: RunContext,
    in_path: Path | None = None,
    out_path: Path | None = None,
    rejects_path: Path | None = None,
) -> None:
    in_path = in_path or ctx.path("selected.jsonl")
    out_path = out_path or ctx.path("corpus.jsonl")
    rejects_path = rejects_path or ctx.path("rejects_stage3.jsonl")
    stamp = ctx.stamp("diversify")
    records = load_records(in_path)
    subset = ctx.config.subset
    model = None
    if subset.diversity and len(records) > subset.target_size:
        tags = sorted({tag for r in records if r.annotation for tag in r.annotation.tags})
        model = build_tag_cluster_model(tags, ctx.require_gateway().embedder, ctx.config.clustering)
    chosen = diversify_ids(
        records,
        subset.target_size,
        model,
        metric=ctx.config.clustering.metric,
        seed=ctx.stage_seed("diversify"),
        diversity=subset.diversity,
    )
    accepted = [
        r.advanced(status=Status.ACCEPTED, stamp=stamp) for r in records if r.record_id in chosen
    ]
    rejected = [
        r.advanced(
            status=Status.REJECTED,
            reject_reason=RejectReason(RejectCode.NOT_SELECTED, "diversity sampling budget"),
            stamp=stamp,
        )
        for r in records
        if r.record_id not in chosen
    ]
    write_records(out_path, accepted)
    write_records(rejects_path, rejected)
    total, survivors, reject_counts = _tally(accepted + rejected)
    _write_manifest(ctx, "diversify", total, survivors, reject_counts)


def _stage_stats(
    ctx: RunContext,
    in_path: Path | None = None,
    out_path: Path | None = None,
    markdown_path: Path | None = None,
) -> None:
    in_path = in_path or ctx.path("corpus.jsonl")
    out_path = out_path or ctx.path("report.json")
    markdown_path = markdown_path or ctx.path("report.md")
    records = load_records(in_path)
    manifests = []
    for stage in STAGE_ORDER[:-1]:
        manifest_path = ctx.manifest_path(stage)
        if manifest_path.exists():
            manifests.append(PipelineManifest.load(manifest_path))
    bundle = ReportBundle(
        difficulty=compute_distribution(records, "difficulty"),
        quality=compute_distribution(records, "quality"),
        tags=compute_tag_frequency(records, ctx.config.stats_top_n),
        manifests=tuple(manifests),
    )
    _atomic_write_text(out_path, render_report(bundle, "structured") + "\n")
    _atomic_write_text(markdown_path, render_report(bundle, "markdown") + "\n")
    _write_manifest(ctx, "stats", len(records), len(records), {})


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


_STAGE_FUNCS: dict[str, Callable[..., None]] = {
    "sample": _stage_sample,
    "distill": _stage_distill,
    "score": _stage_score,
    "filter": _stage_filter,
    "select": _stage_select,
    "diversify": _stage_diversify,
    "stats": _stage_stats,
}


def run_stage(ctx: RunContext, stage: str, **paths) -> None:
    """Execute one stage; failures surface as StageFailure with the stage name."""
    if stage not in _STAGE_FUNCS:
        raise ValueError(f"unknown stage {stage!r}")
    ctx.workdir.mkdir(parents=True, exist_ok=True)
    try:
        _STAGE_FUNCS[stage](ctx, **paths)
    except StageFailure:
        raise
    except Exception as exc:
        raise StageFailure(stage, exc) from exc


def artifact_paths(config: RunConfig) -> dict[str, tuple[Path, ...]]:
    workdir = Path(config.workdir)
    return {stage: tuple(workdir / name for name in names) for stage, names in STAGE_ARTIFACTS.items()}


def run_pipeline(config: RunConfig, gateway: Gateway | None = None) -> dict[str, tuple[Path, ...]]:
    """Execute every stage in order; returns the artifact map."""
    ctx = RunContext.create(config, gateway)
    for stage in STAGE_ORDER:
        run_stage(ctx, stage)
    return artifact_paths(config)


def resume(config: RunConfig, from_stage: str, gateway: Gateway | None = None) -> dict[str, tuple[Path, ...]]:
    """Continue a halted run from the named stage.

    Earlier stages must have complete outputs and manifests stamped with the
    same config hash; mixing configurations is refused.
    """
    if from_stage not in STAGE_ORDER:
        raise ValueError(f"unknown stage {from_stage!r}")
    ctx = RunContext.create(config, gateway)
    index = STAGE_ORDER.index(from_stage)
    for prior in STAGE_ORDER[:index]:
        manifest_path = ctx.manifest_path(prior)
        if not manifest_path.exists():
            raise MissingArtifact(f"stage {prior!r} has no manifest at {manifest_path}")
        manifest = PipelineManifest.load(manifest_path)
        if manifest.config_hash != ctx.config_digest:
            raise ConfigHashMismatch(
                f"stage {prior!r} was produced under config {manifest.config_hash[:12]}, "
                f"current config is {ctx.config_digest[:12]}"
            )
        for name in STAGE_ARTIFACTS[prior]:
            if not ctx.path(name).exists():
                raise MissingArtifact(f"stage {prior!r} output {name} is missing")
    for stage in STAGE_ORDER[index:]:
        run_stage(ctx, stage)
    return artifact_paths(config)
