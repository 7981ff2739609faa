"""Run configuration: file schema, defaults, and the canonical config hash.

The config file is YAML (JSON is a subset, so either works). Environment
variables override nothing except the credential, which is read from the env
var named here and never stored. The config hash stamps every manifest;
``workdir`` and ``concurrency`` are excluded from it because they cannot
change pipeline results.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import yaml

from .annotate import ScorerConfig
from .distill import TeacherConfig
from .gateway import RetryPolicy
from .hashing import content_hash
from .quality import Stage1Config
from .sampling import SamplingPlan
from .selection import ClusteringConfig, SelectionStrategy, SubsetSpec


class ConfigError(ValueError):
    """The configuration file or overrides are invalid."""


@dataclass(frozen=True)
class EndpointSpec:
    base_url: str = ""
    model: str = ""


@dataclass(frozen=True)
class RunConfig:
    workdir: Path = Path("run")
    seed: int = 0
    concurrency: int = 4
    run_id: str = ""  # blank: derived from the config hash
    provenance_stamp: str = ""  # blank keeps reruns byte-identical
    stats_top_n: int = 400
    credential_env: str = "COTFORGE_API_KEY"
    mock: bool = False
    mock_fixtures: Path | None = None
    mock_embedding_dim: int = 32
    inputs: tuple[str, ...] = ()
    teacher_endpoint: EndpointSpec = EndpointSpec()
    scorer_endpoint: EndpointSpec = EndpointSpec()
    embedder_endpoint: EndpointSpec = EndpointSpec()
    retry: RetryPolicy = RetryPolicy()
    teacher: TeacherConfig = TeacherConfig()
    scorer: ScorerConfig = ScorerConfig()
    sampling: SamplingPlan = SamplingPlan()
    stage1: Stage1Config = Stage1Config()
    clustering: ClusteringConfig = ClusteringConfig()
    subset: SubsetSpec = SubsetSpec(target_size=500000, strategy=SelectionStrategy(kind="difficulty"))

    def hash_payload(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "run_id": self.run_id,
            "provenance_stamp": self.provenance_stamp,
            "stats_top_n": self.stats_top_n,
            "credential_env": self.credential_env,
            "mock": self.mock,
            "mock_fixtures": str(self.mock_fixtures) if self.mock_fixtures else None,
            "mock_embedding_dim": self.mock_embedding_dim,
            "inputs": list(self.inputs),
            "endpoints": {
                "teacher": [self.teacher_endpoint.base_url, self.teacher_endpoint.model],
                "scorer": [self.scorer_endpoint.base_url, self.scorer_endpoint.model],
                "embedder": [self.embedder_endpoint.base_url, self.embedder_endpoint.model],
            },
            "retry": [self.retry.max_attempts, self.retry.base_backoff, self.retry.jitter_fraction],
            "teacher": [
                self.teacher.model_name,
                self.teacher.temperature,
                self.teacher.max_output_tokens,
                self.teacher.system_prompt,
            ],
            "scorer": [self.scorer.model_name, self.scorer.temperature, self.scorer.rubric_prompt],
            "sampling": [self.sampling.per_category_cap, self.sampling.target_total],
            "stage1": [
                self.stage1.min_tokens,
                self.stage1.max_tokens,
                self.stage1.repetition_ngram,
                self.stage1.repetition_max_ratio,
                list(self.stage1.placeholder_lexicon),
                list(self.stage1.instability_lexicon),
            ],
            "clustering": [self.clustering.eps, self.clustering.min_pts, self.clustering.metric],
            "subset": [
                self.subset.target_size,
                self.subset.strategy.spec_string(),
                self.subset.diversity,
            ],
        }


def config_hash(config: RunConfig) -> str:
    return content_hash(config.hash_payload())


def _take(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(sorted(unknown))}")


def _endpoint(section: dict | None, where: str) -> EndpointSpec:
    if section is None:
        return EndpointSpec()
    _take(section, {"base_url", "model"}, where)
    return EndpointSpec(base_url=str(section.get("base_url", "")), model=str(section.get("model", "")))


def config_from_payload(payload: dict, *, base_dir: Path | None = None) -> RunConfig:
    """Build a RunConfig from a parsed config document (strict on unknown keys)."""
    if not isinstance(payload, dict):
        raise ConfigError("config document must be a mapping")
    _take(
        payload,
        {
            "workdir", "seed", "concurrency", "run_id", "provenance_stamp", "stats_top_n",
            "credential_env", "mock", "mock_fixtures", "mock_embedding_dim", "inputs",
            "endpoints", "retry", "teacher", "scorer", "sampling", "stage1", "clustering", "subset",
        },
        "config",
    )
    base = base_dir or Path(".")

    def resolve(raw: str) -> Path:
        path = Path(raw)
        return path if path.is_absolute() else base / path

    endpoints = payload.get("endpoints") or {}
    _take(endpoints, {"teacher", "scorer", "embedder"}, "endpoints")

    retry_section = payload.get("retry") or {}
    _take(retry_section, {"max_attempts", "base_backoff", "jitter_fraction"}, "retry")
    teacher_section = payload.get("teacher") or {}
    _take(teacher_section, {"model_name", "temperature", "max_output_tokens", "system_prompt"}, "teacher")
    scorer_section = payload.get("scorer") or {}
    _take(scorer_section, {"model_name", "temperature", "rubric_prompt"}, "scorer")
    sampling_section = payload.get("sampling") or {}
    _take(sampling_section, {"per_category_cap", "target_total"}, "sampling")
    stage1_section = payload.get("stage1") or {}
    _take(
        stage1_section,
        {
            "min_tokens", "max_tokens", "repetition_ngram", "repetition_max_ratio",
            "placeholder_lexicon", "instability_lexicon",
        },
        "stage1",
    )
    clustering_section = payload.get("clustering") or {}
    _take(clustering_section, {"eps", "min_pts", "metric"}, "clustering")
    subset_section = payload.get("subset") or {}
    _take(subset_section, {"target_size", "strategy", "diversity"}, "subset")

    defaults = RunConfig()
    try:
        strategy = (
            SelectionStrategy.parse(str(subset_section["strategy"]))
            if "strategy" in subset_section
            else defaults.subset.strategy
        )
        stage1_defaults = defaults.stage1
        return RunConfig(
            workdir=resolve(str(payload.get("workdir", "run"))),
            seed=int(payload.get("seed", 0)),
            concurrency=int(payload.get("concurrency", defaults.concurrency)),
            run_id=str(payload.get("run_id", "")),
            provenance_stamp=str(payload.get("provenance_stamp", "")),
            stats_top_n=int(payload.get("stats_top_n", defaults.stats_top_n)),
            credential_env=str(payload.get("credential_env", defaults.credential_env)),
            mock=bool(payload.get("mock", False)),
            mock_fixtures=(
                resolve(str(payload["mock_fixtures"])) if payload.get("mock_fixtures") else None
            ),
            mock_embedding_dim=int(payload.get("mock_embedding_dim", defaults.mock_embedding_dim)),
            inputs=tuple(str(resolve(str(p))) for p in payload.get("inputs", [])),
            teacher_endpoint=_endpoint(endpoints.get("teacher"), "endpoints.teacher"),
            scorer_endpoint=_endpoint(endpoints.get("scorer"), "endpoints.scorer"),
            embedder_endpoint=_endpoint(endpoints.get("embedder"), "endpoints.embedder"),
            retry=RetryPolicy(
                max_attempts=int(retry_section.get("max_attempts", defaults.retry.max_attempts)),
                base_backoff=float(retry_section.get("base_backoff", defaults.retry.base_backoff)),
                jitter_fraction=float(
                    retry_section.get("jitter_fraction", defaults.retry.jitter_fraction)
                ),
            ),
            teacher=TeacherConfig(
                model_name=str(teacher_section.get("model_name", defaults.teacher.model_name)),
                temperature=float(teacher_section.get("temperature", defaults.teacher.temperature)),
                max_output_tokens=int(
                    teacher_section.get("max_output_tokens", defaults.teacher.max_output_tokens)
                ),
                system_prompt=str(teacher_section.get("system_prompt", defaults.teacher.system_prompt)),
            ),
            scorer=ScorerConfig(
                model_name=str(scorer_section.get("model_name", defaults.scorer.model_name)),
                rubric_prompt=str(scorer_section.get("rubric_prompt", defaults.scorer.rubric_prompt)),
                temperature=float(scorer_section.get("temperature", defaults.scorer.temperature)),
            ),
            sampling=SamplingPlan(
                per_category_cap=int(
                    sampling_section.get("per_category_cap", defaults.sampling.per_category_cap)
                ),
                target_total=(
                    int(sampling_section["target_total"])
                    if sampling_section.get("target_total") is not None
                    else None
                ),
            ),
            stage1=Stage1Config(
                min_tokens=int(stage1_section.get("min_tokens", stage1_defaults.min_tokens)),
                max_tokens=int(stage1_section.get("max_tokens", stage1_defaults.max_tokens)),
                repetition_ngram=int(
                    stage1_section.get("repetition_ngram", stage1_defaults.repetition_ngram)
                ),
                repetition_max_ratio=float(
                    stage1_section.get("repetition_max_ratio", stage1_defaults.repetition_max_ratio)
                ),
                placeholder_lexicon=tuple(
                    stage1_section.get("placeholder_lexicon", stage1_defaults.placeholder_lexicon)
                ),
                instability_lexicon=tuple(
                    stage1_section.get("instability_lexicon", stage1_defaults.instability_lexicon)
                ),
            ),
            clustering=ClusteringConfig(
                eps=float(clustering_section.get("eps", defaults.clustering.eps)),
                min_pts=int(clustering_section.get("min_pts", defaults.clustering.min_pts)),
                metric=str(clustering_section.get("metric", defaults.clustering.metric)),
            ),
            subset=SubsetSpec(
                target_size=int(subset_section.get("target_size", defaults.subset.target_size)),
                strategy=strategy,
                diversity=bool(subset_section.get("diversity", True)),
            ),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        payload = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_payload(payload or {}, base_dir=path.parent)


def with_overrides(config: RunConfig, **overrides: Any) -> RunConfig:
    """dataclasses.replace with ConfigError on invalid values."""
    try:
        return replace(config, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
