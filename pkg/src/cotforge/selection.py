"""Subset construction: threshold strategies, tag clustering, diversity sampling.

The clustering and farthest-point kernels are implemented here rather than
borrowed so their tie-breaking and label order are pinned down exactly;
determinism of the final subset depends on both.
"""

from __future__ import annotations

import logging
import random
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .records import Annotation, CuratedRecord, RejectCode, RejectReason, Status

logger = logging.getLogger(__name__)

_STRATEGY_KINDS = ("random", "quality", "difficulty", "quality_and_difficulty")


@dataclass(frozen=True)
class SelectionStrategy:
    """One of the four subset-selection rules the pipeline compares."""

    kind: str
    sample_size: int | None = None
    min_quality: int = 5
    min_difficulty: int = 4

    def __post_init__(self) -> None:
        if self.kind not in _STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.kind == "random" and (self.sample_size is None or self.sample_size < 1):
            raise ValueError("random strategy needs a positive sample_size")
        for name, value in (("min_quality", self.min_quality), ("min_difficulty", self.min_difficulty)):
            if not 1 <= value <= 5:
                raise ValueError(f"{name} must be within [1,5]")

    @classmethod
    def parse(cls, text: str) -> "SelectionStrategy":
        """Parse CLI forms: ``random:N``, ``quality:Q``, ``difficulty:D``,
        ``quality+difficulty:Q,D``."""
        kind, _, arg = text.partition(":")
        kind = kind.strip().lower()
        if kind == "random":
            return cls(kind="random", sample_size=int(arg))
        if kind == "quality":
            return cls(kind="quality", min_quality=int(arg) if arg else 5)
        if kind == "difficulty":
            return cls(kind="difficulty", min_difficulty=int(arg) if arg else 4)
        if kind in ("quality+difficulty", "quality_and_difficulty"):
            if arg:
                q, _, d = arg.partition(",")
                return cls(kind="quality_and_difficulty", min_quality=int(q), min_difficulty=int(d))
            return cls(kind="quality_and_difficulty")
        raise ValueError(f"cannot parse strategy {text!r}")

    def spec_string(self) -> str:
        if self.kind == "random":
            return f"random:{self.sample_size}"
        if self.kind == "quality":
            return f"quality:{self.min_quality}"
        if self.kind == "difficulty":
            return f"difficulty:{self.min_difficulty}"
        return f"quality+difficulty:{self.min_quality},{self.min_difficulty}"

    def accepts(self, annotation: Annotation) -> bool:
        if self.kind == "random":
            return True
        ok = True
        if self.kind in ("quality", "quality_and_difficulty"):
            ok = ok and annotation.quality >= self.min_quality
        if self.kind in ("difficulty", "quality_and_difficulty"):
            ok = ok and annotation.difficulty >= self.min_difficulty
        return ok


def _require_annotated(records: Sequence[CuratedRecord]) -> None:
    for record in records:
        if record.status not in (Status.ANNOTATED, Status.ACCEPTED) or record.annotation is None:
            raise ValueError(
                f"record {record.record_id} is not annotated (status {record.status.value})"
            )


def select_by_strategy(
    records: Iterable[CuratedRecord], strategy: SelectionStrategy, seed: int = 0
) -> list[CuratedRecord]:
    """Apply one strategy; output is sorted by id for determinism."""
    records = list(records)
    _require_annotated(records)
    if strategy.kind == "random":
        assert strategy.sample_size is not None
        if strategy.sample_size > len(records):
            raise ValueError(
                f"random sample of {strategy.sample_size} from only {len(records)} records"
            )
        kept = random.Random(seed).sample(records, strategy.sample_size)
    else:
        kept = [r for r in records if strategy.accepts(r.annotation)]
    return sorted(kept, key=lambda r: r.record_id)


@dataclass(frozen=True)
class ClusteringConfig:
    eps: float = 0.15
    min_pts: int = 2
    metric: str = "cosine"

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be at least 1")
        if self.metric not in ("cosine", "euclidean"):
            raise ValueError(f"unknown metric {self.metric!r}")


def _as_matrix(points) -> np.ndarray:
    matrix = np.asarray(points, dtype=float)
    if matrix.size == 0:
        return matrix.reshape(0, 0)
    if matrix.ndim != 2:
        raise ValueError("points must all share one dimension")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("points must have finite coordinates")
    return matrix


def _cosine_row(points: np.ndarray, norms: np.ndarray, index: int) -> np.ndarray:
    """Cosine distances from one point to all points.

    Zero vectors have no direction: they sit at distance 1 from everything
    except other zero vectors, which they coincide with.
    """
    zero = norms == 0.0
    if zero[index]:
        row = np.where(zero, 0.0, 1.0)
        return row
    safe = np.where(zero, 1.0, norms)
    sims = points @ points[index] / (safe * norms[index])
    np.clip(sims, -1.0, 1.0, out=sims)
    row = 1.0 - sims
    row[zero] = 1.0
    row[index] = 0.0
    return row


def _euclidean_row(points: np.ndarray, sqnorms: np.ndarray, index: int) -> np.ndarray:
    sq = sqnorms + sqnorms[index] - 2.0 * (points @ points[index])
    np.clip(sq, 0.0, None, out=sq)
    return np.sqrt(sq)


def pairwise_distances(points, metric: str) -> np.ndarray:
    matrix = _as_matrix(points)
    n = len(matrix)
    out = np.zeros((n, n))
    if metric == "cosine":
        norms = np.linalg.norm(matrix, axis=1)
        for i in range(n):
            out[i] = _cosine_row(matrix, norms, i)
    elif metric == "euclidean":
        sqnorms = np.einsum("ij,ij->i", matrix, matrix)
        for i in range(n):
            out[i] = _euclidean_row(matrix, sqnorms, i)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return out


def dbscan(points, config: ClusteringConfig) -> list[int]:
    """Density clustering with pinned-down determinism.

    A point is core when it has at least ``min_pts`` neighbors within ``eps``
    inclusive, itself counted. Clusters grow from core points in ascending
    index order with FIFO expansion, so labels are reproducible for a fixed
    point order; border points join the first cluster that reaches them.
    Noise is labeled -1.
    """
    matrix = _as_matrix(points)
    n = len(matrix)
    if n == 0:
        return []
    distances = pairwise_distances(matrix, config.metric)
    neighbors = [np.flatnonzero(distances[i] <= config.eps) for i in range(n)]
    core = [len(neighbors[i]) >= config.min_pts for i in range(n)]

    labels: list[int | None] = [None] * n
    cluster = 0
    for start in range(n):
        if labels[start] is not None or not core[start]:
            continue
        labels[start] = cluster
        queue = deque([start])
        while queue:
            current = queue.popleft()
            for j in neighbors[current]:
                j = int(j)
                if labels[j] is None:
                    labels[j] = cluster
                    if core[j]:
                        queue.append(j)
        cluster += 1
    return [label if label is not None else -1 for label in labels]


@dataclass(frozen=True)
class TagClusterModel:
    """Merged-tag geometry: cluster ids, centroids, and the raw tag vectors."""

    tag_to_cluster: dict[str, int]
    cluster_centroids: dict[int, np.ndarray]
    tag_vectors: dict[str, np.ndarray]
    embedding_dim: int

    def effective_vector(self, tag: str) -> np.ndarray:
        """Cluster centroid for clustered tags; a noise tag keeps its own vector."""
        if tag not in self.tag_to_cluster:
            raise ValueError(f"tag {tag!r} is not in the cluster model")
        cluster = self.tag_to_cluster[tag]
        if cluster == -1:
            return self.tag_vectors[tag]
        return self.cluster_centroids[cluster]

    def cluster_members(self, tag: str) -> frozenset[str]:
        cluster = self.tag_to_cluster.get(tag, -1)
        if cluster == -1:
            return frozenset((tag,))
        return frozenset(t for t, c in self.tag_to_cluster.items() if c == cluster)


def build_tag_cluster_model(
    tags: Sequence[str], embedder, config: ClusteringConfig
) -> TagClusterModel:
    """Embed every tag, cluster with dbscan, and average members into centroids."""
    tags = list(tags)
    if len(set(tags)) != len(tags):
        raise ValueError("tags must be deduplicated before clustering")
    if not tags:
        return TagClusterModel({}, {}, {}, 0)
    batch = embedder.embed(tags)
    vectors = np.asarray(batch.vectors, dtype=float)
    labels = dbscan(vectors, config)
    centroids: dict[int, np.ndarray] = {}
    for cluster_id in sorted(set(labels) - {-1}):
        members = vectors[[i for i, lab in enumerate(labels) if lab == cluster_id]]
        centroids[cluster_id] = members.mean(axis=0)
    return TagClusterModel(
        tag_to_cluster=dict(zip(tags, labels)),
        cluster_centroids=centroids,
        tag_vectors={tag: vectors[i] for i, tag in enumerate(tags)},
        embedding_dim=vectors.shape[1],
    )


@dataclass(frozen=True)
class ReasoningProfile:
    """Fixed-dimension vector standing in for a record's reasoning mix."""

    record_id: str
    vector: np.ndarray


def reasoning_profile(record: CuratedRecord, model: TagClusterModel) -> ReasoningProfile:
    """Mean of the record's effective tag vectors (centroid or own embedding)."""
    if record.annotation is None or not record.annotation.tags:
        raise ValueError(f"record {record.record_id} has no tags to profile")
    vectors = [model.effective_vector(tag) for tag in record.annotation.tags]
    return ReasoningProfile(record_id=record.record_id, vector=np.mean(vectors, axis=0))


def farthest_point_sampling(
    profiles: Sequence[ReasoningProfile],
    k: int,
    *,
    metric: str = "cosine",
    seed: int = 0,
    random_start: bool = False,
) -> list[str]:
    """Greedy max-min selection of ``k`` profile ids, in pick order.

    The default start is the largest-norm profile (smallest id on ties) so
    runs are reproducible without a seed; ``random_start`` draws the first
    pick under ``seed`` instead. Every later pick maximizes the minimum
    distance to the already-selected set, ties again broken by smallest id.
    """
    ordered = sorted(profiles, key=lambda p: p.record_id)
    n = len(ordered)
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} available profiles")
    ids = [p.record_id for p in ordered]
    matrix = _as_matrix([p.vector for p in ordered])
    norms = np.linalg.norm(matrix, axis=1)
    sqnorms = np.einsum("ij,ij->i", matrix, matrix)

    def row(index: int) -> np.ndarray:
        if metric == "cosine":
            return _cosine_row(matrix, norms, index)
        if metric == "euclidean":
            return _euclidean_row(matrix, sqnorms, index)
        raise ValueError(f"unknown metric {metric!r}")

    if random_start:
        start = random.Random(seed).randrange(n)
    else:
        start = int(np.flatnonzero(norms == norms.max())[0])
    picked = [start]
    chosen = np.zeros(n, dtype=bool)
    chosen[start] = True
    min_dist = row(start)
    for _ in range(1, k):
        masked = np.where(chosen, -np.inf, min_dist)
        best = masked.max()
        nxt = int(np.flatnonzero(masked == best)[0])
        picked.append(nxt)
        chosen[nxt] = True
        np.minimum(min_dist, row(nxt), out=min_dist)
    return [ids[i] for i in picked]


@dataclass(frozen=True)
class SubsetSpec:
    target_size: int
    strategy: SelectionStrategy
    diversity: bool = True
    random_seed: int = 0

    def __post_init__(self) -> None:
        if self.target_size < 1:
            raise ValueError("target_size must be at least 1")


def diversify_ids(
    records: Sequence[CuratedRecord],
    target_size: int,
    model: TagClusterModel | None,
    *,
    metric: str = "cosine",
    seed: int = 0,
    diversity: bool = True,
) -> set[str]:
    """Ids to keep when trimming survivors down to the target size."""
    if len(records) <= target_size:
        if len(records) < target_size:
            logger.warning(
                "only %d survivors for target size %d; keeping all", len(records), target_size
            )
        return {r.record_id for r in records}
    if diversity:
        if model is None:
            raise ValueError("diversity sampling needs a tag cluster model")
        profiles = [reasoning_profile(r, model) for r in records]
        return set(farthest_point_sampling(profiles, target_size, metric=metric, seed=seed))
    rng = random.Random(seed)
    return {r.record_id for r in rng.sample(list(records), target_size)}


def strategy_reject_reason(record: CuratedRecord, strategy: SelectionStrategy) -> RejectReason:
    annotation = record.annotation
    if (
        strategy.kind in ("difficulty", "quality_and_difficulty")
        and annotation is not None
        and annotation.difficulty < strategy.min_difficulty
    ):
        return RejectReason(
            RejectCode.LOW_DIFFICULTY,
            f"difficulty {annotation.difficulty} below {strategy.min_difficulty}",
        )
    return RejectReason(RejectCode.NOT_SELECTED, "strategy filter")


def build_subset(
    records: Iterable[CuratedRecord],
    spec: SubsetSpec,
    model: TagClusterModel | None,
    *,
    metric: str = "cosine",
) -> list[CuratedRecord]:
    """Strategy selection followed by diversity trimming; marks every record.

    Selected records come back Accepted, the rest Rejected; never pads when
    survivors fall short of the target.
    """
    records = list(records)
    kept = select_by_strategy(records, spec.strategy, spec.random_seed)
    kept_ids = {r.record_id for r in kept}
    chosen = diversify_ids(
        kept, spec.target_size, model, metric=metric, seed=spec.random_seed, diversity=spec.diversity
    )
    marked: list[CuratedRecord] = []
    for record in records:
        if record.record_id in chosen:
            marked.append(record.advanced(status=Status.ACCEPTED))
        elif record.record_id in kept_ids:
            marked.append(
                record.advanced(
                    status=Status.REJECTED,
                    reject_reason=RejectReason(RejectCode.NOT_SELECTED, "diversity sampling budget"),
                )
            )
        else:
            marked.append(
                record.advanced(
                    status=Status.REJECTED, reject_reason=strategy_reject_reason(record, spec.strategy)
                )
            )
    return marked


def filter_by_tags(
    records: Iterable[CuratedRecord],
    include_tags: Sequence[str],
    exclude_tags: Sequence[str],
    model: TagClusterModel | None = None,
) -> list[CuratedRecord]:
    """Keep records matching include tags and avoiding exclude tags.

    With a cluster model, a query tag matches every tag in its cluster, so
    asking for one synonym finds them all.
    """
    def expand(tags: Sequence[str]) -> set[str]:
        expanded: set[str] = set()
        for tag in tags:
            tag = tag.strip().lower()
            if not tag:
                continue
            if model is not None:
                expanded |= model.cluster_members(tag)
            else:
                expanded.add(tag)
        return expanded

    include = expand(include_tags)
    exclude = expand(exclude_tags)
    kept = []
    for record in records:
        tags = set(record.annotation.tags) if record.annotation else set()
        if exclude & tags:
            continue
        if include and not (include & tags):
            continue
        kept.append(record)
    return kept
