"""Command-line entry points: one subcommand per stage plus run and resume.

Exit codes by error family: 0 success, 2 usage, 3 configuration, 4 gateway,
5 data/validation, 6 resume, 7 other stage failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from .config import ConfigError, RunConfig, load_config, with_overrides
from .gateway import GatewayError
from .pipeline import (
    ResumeError,
    RunContext,
    STAGE_ORDER,
    StageFailure,
    resume,
    run_pipeline,
    run_stage,
)
from .quality import Stage1Config, load_lexicon
from .records import RecordError
from .sampling import IngestError, SamplingPlan
from .selection import ClusteringConfig, SelectionStrategy, SubsetSpec, TagClusterModel, build_tag_cluster_model, filter_by_tags
from .stats import ReportBundle, compute_distribution, compute_tag_frequency, render_report
from .records import load_records, write_records

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_GATEWAY = 4
EXIT_DATA = 5
EXIT_RESUME = 6
EXIT_STAGE = 7


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="run configuration file (YAML)")
    parser.add_argument("--workdir", type=Path, help="working directory for artifacts")
    parser.add_argument("--seed", type=int, help="global random seed")
    parser.add_argument("--concurrency", type=int, help="bounded worker pool size")
    parser.add_argument("--mock", action="store_true", help="use the deterministic mock gateway")
    parser.add_argument("--fixtures", type=Path, help="mock fixture directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cotforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="stratified-sample the seed pool")
    _add_common(p)
    p.add_argument("inputs", nargs="*", help="pool files (defaults to config inputs)")
    p.add_argument("--cap", type=int, help="per-category cap")
    p.add_argument("--target-total", type=int, help="total budget after capping")
    p.add_argument("--out", type=Path, help="output records file")

    p = sub.add_parser("distill", help="generate reasoning traces via the teacher")
    _add_common(p)
    p.add_argument("--in", dest="in_path", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-tokens", type=int)

    p = sub.add_parser("score", help="joint difficulty/quality/tag annotation")
    _add_common(p)
    p.add_argument("--in", dest="in_path", type=Path)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("filter", help="rule-based quality filtering")
    _add_common(p)
    p.add_argument("--in", dest="in_path", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--rejects", type=Path)
    p.add_argument("--min-tokens", type=int)
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--placeholder-lexicon", type=Path, help="one entry per line")
    p.add_argument("--instability-lexicon", type=Path, help="one entry per line")

    p = sub.add_parser("select", help="threshold/random subset strategy")
    _add_common(p)
    p.add_argument("--strategy", help="random:N | quality:Q | difficulty:D | quality+difficulty:Q,D")
    p.add_argument("--in", dest="in_path", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--rejects", type=Path)

    p = sub.add_parser("diversify", help="tag-embedding diversity sampling")
    _add_common(p)
    p.add_argument("--target", type=int, help="subset budget")
    p.add_argument("--eps", type=float)
    p.add_argument("--min-pts", type=int)
    p.add_argument("--metric", choices=("cosine", "euclidean"))
    p.add_argument("--no-diversity", action="store_true", help="random truncation instead")
    p.add_argument("--in", dest="in_path", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--rejects", type=Path)

    p = sub.add_parser("tags", help="filter records by (cluster-expanded) tags")
    _add_common(p)
    p.add_argument("--include", default="", help="comma-separated tags to require")
    p.add_argument("--exclude", default="", help="comma-separated tags to drop")
    p.add_argument("--no-clusters", action="store_true", help="match tags exactly")
    p.add_argument("--in", dest="in_path", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("stats", help="distribution and tag-frequency reports")
    _add_common(p)
    p.add_argument("--in", dest="in_path", type=Path, required=True)
    p.add_argument("--out", type=Path, help="structured report path")
    p.add_argument("--markdown", type=Path, help="markdown report path")
    p.add_argument("--top-n", type=int, default=None)

    p = sub.add_parser("run", help="execute the full pipeline")
    _add_common(p)

    p = sub.add_parser("resume", help="continue a halted run from a stage")
    _add_common(p)
    p.add_argument("--from", dest="from_stage", required=True, choices=STAGE_ORDER)

    return parser


def _load_base_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if getattr(args, "workdir", None) is not None:
        overrides["workdir"] = args.workdir
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "concurrency", None) is not None:
        overrides["concurrency"] = args.concurrency
    if getattr(args, "mock", False):
        overrides["mock"] = True
    if getattr(args, "fixtures", None) is not None:
        overrides["mock_fixtures"] = args.fixtures
    return with_overrides(config, **overrides) if overrides else config


def _stage_config(args: argparse.Namespace, config: RunConfig) -> RunConfig:
    """Fold per-command flags into the nested stage configs."""
    command = args.command
    if command == "sample":
        plan = config.sampling
        if args.cap is not None or args.target_total is not None:
            plan = SamplingPlan(
                per_category_cap=args.cap if args.cap is not None else plan.per_category_cap,
                target_total=args.target_total if args.target_total is not None else plan.target_total,
            )
            config = with_overrides(config, sampling=plan)
        if args.inputs:
            config = with_overrides(config, inputs=tuple(str(p) for p in args.inputs))
    elif command == "distill":
        teacher = config.teacher
        if args.temperature is not None or args.max_tokens is not None:
            from dataclasses import replace

            teacher = replace(
                teacher,
                temperature=args.temperature if args.temperature is not None else teacher.temperature,
                max_output_tokens=args.max_tokens if args.max_tokens is not None else teacher.max_output_tokens,
            )
            config = with_overrides(config, teacher=teacher)
    elif command == "filter":
        stage1 = config.stage1
        changes = {}
        if args.min_tokens is not None:
            changes["min_tokens"] = args.min_tokens
        if args.max_tokens is not None:
            changes["max_tokens"] = args.max_tokens
        if args.placeholder_lexicon is not None:
            changes["placeholder_lexicon"] = load_lexicon(args.placeholder_lexicon)
        if args.instability_lexicon is not None:
            changes["instability_lexicon"] = load_lexicon(args.instability_lexicon)
        if changes:
            from dataclasses import replace

            config = with_overrides(config, stage1=replace(stage1, **changes))
    elif command == "select":
        if args.strategy:
            subset = SubsetSpec(
                target_size=config.subset.target_size,
                strategy=SelectionStrategy.parse(args.strategy),
                diversity=config.subset.diversity,
            )
            config = with_overrides(config, subset=subset)
    elif command == "diversify":
        subset = config.subset
        clustering = config.clustering
        from dataclasses import replace

        if args.target is not None or args.no_diversity:
            subset = SubsetSpec(
                target_size=args.target if args.target is not None else subset.target_size,
                strategy=subset.strategy,
                diversity=not args.no_diversity and subset.diversity,
            )
            config = with_overrides(config, subset=subset)
        changes = {}
        if args.eps is not None:
            changes["eps"] = args.eps
        if args.min_pts is not None:
            changes["min_pts"] = args.min_pts
        if args.metric is not None:
            changes["metric"] = args.metric
        if changes:
            config = with_overrides(config, clustering=replace(clustering, **changes))
    return config


def _cmd_tags(args: argparse.Namespace, config: RunConfig) -> None:
    records = load_records(args.in_path)
    include = [t for t in args.include.split(",") if t.strip()]
    exclude = [t for t in args.exclude.split(",") if t.strip()]
    model: TagClusterModel | None = None
    if not args.no_clusters:
        tags = sorted({tag for r in records if r.annotation for tag in r.annotation.tags})
        if tags:
            ctx = RunContext.create(config)
            model = build_tag_cluster_model(tags, ctx.require_gateway().embedder, config.clustering)
    kept = filter_by_tags(records, include, exclude, model)
    write_records(args.out, kept)
    print(f"kept {len(kept)} of {len(records)} records")


def _cmd_stats(args: argparse.Namespace, config: RunConfig) -> None:
    records = load_records(args.in_path)
    top_n = args.top_n if args.top_n is not None else config.stats_top_n
    bundle = ReportBundle(
        difficulty=compute_distribution(records, "difficulty"),
        quality=compute_distribution(records, "quality"),
        tags=compute_tag_frequency(records, top_n),
    )
    if args.out:
        args.out.write_text(render_report(bundle, "structured") + "\n", encoding="utf-8")
    if args.markdown:
        args.markdown.write_text(render_report(bundle, "markdown") + "\n", encoding="utf-8")
    if not args.out and not args.markdown:
        print(render_report(bundle, "structured"))


_STAGE_PATH_KWARGS = {
    "sample": ("out",),
    "distill": ("in_path", "out"),
    "score": ("in_path", "out"),
    "filter": ("in_path", "out", "rejects"),
    "select": ("in_path", "out", "rejects"),
    "diversify": ("in_path", "out", "rejects"),
}

_KWARG_NAMES = {"in_path": "in_path", "out": "out_path", "rejects": "rejects_path"}


def _dispatch(args: argparse.Namespace) -> int:
    config = _load_base_config(args)

    if args.command == "run":
        run_pipeline(config)
        print(f"run complete; artifacts in {config.workdir}")
        return EXIT_OK
    if args.command == "resume":
        resume(config, args.from_stage)
        print(f"resumed from {args.from_stage}; artifacts in {config.workdir}")
        return EXIT_OK
    if args.command == "tags":
        _cmd_tags(args, config)
        return EXIT_OK
    if args.command == "stats":
        _cmd_stats(args, config)
        return EXIT_OK

    config = _stage_config(args, config)
    ctx = RunContext.create(config)
    paths = {}
    for arg_name in _STAGE_PATH_KWARGS[args.command]:
        value = getattr(args, arg_name, None)
        if value is not None:
            paths[_KWARG_NAMES[arg_name]] = Path(value)
    run_stage(ctx, args.command, **paths)
    print(f"stage {args.command} complete")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResumeError as exc:
        print(f"resume error: {exc}", file=sys.stderr)
        return EXIT_RESUME
    except GatewayError as exc:
        print(f"gateway error: {exc}", file=sys.stderr)
        return EXIT_GATEWAY
    except StageFailure as exc:
        print(str(exc), file=sys.stderr)
        if isinstance(exc.cause, ConfigError):
            return EXIT_CONFIG
        if isinstance(exc.cause, GatewayError):
            return EXIT_GATEWAY
        if isinstance(exc.cause, (RecordError, IngestError, ValueError)):
            return EXIT_DATA
        return EXIT_STAGE
    except (RecordError, IngestError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
