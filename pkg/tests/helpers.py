"""Shared builders and independent reference implementations used as oracles.

The reference implementations here deliberately use different mechanics from
the package (regex and scalar loops instead of scanning and numpy) so tests
compare two independent routes to the same documented semantics.
"""

from __future__ import annotations

import math
import random
import re

from cotforge.gateway import ChatResponse, FinishReason
from cotforge.records import (
    Annotation,
    CuratedRecord,
    DistilledTrace,
    RejectCode,
    SeedSample,
    Status,
)
from cotforge.tokens import count_tokens

# ---------------------------------------------------------------- builders


def make_seed(i: int = 0, category: str = "general", source: str = "pool") -> SeedSample:
    return SeedSample(
        id=f"{source}-{i:05d}",
        source_dataset=source,
        category=category,
        image_ref=f"img://{source}/{i}",
        instruction=f"Question number {i} about {category}?",
    )


def make_trace(think: str, answer: str = "done") -> DistilledTrace:
    return DistilledTrace(
        think_text=think,
        answer_text=answer,
        raw_text=f"<think>{think}</think>\n<answer>{answer}</answer>",
        token_count=count_tokens(think),
    )


def distilled_record(i: int, think: str, *, category: str = "general") -> CuratedRecord:
    return CuratedRecord(
        seed=make_seed(i, category=category), trace=make_trace(think), status=Status.DISTILLED
    )


def annotated_record(
    i: int,
    difficulty: int = 3,
    quality: int = 5,
    tags: tuple[str, ...] = ("reasoning",),
    *,
    think: str | None = None,
    category: str = "general",
) -> CuratedRecord:
    think = think if think is not None else clean_think(random.Random(i), 40)
    return CuratedRecord(
        seed=make_seed(i, category=category),
        trace=make_trace(think),
        annotation=Annotation(difficulty=difficulty, quality=quality, tags=tags),
        status=Status.ANNOTATED,
    )


def clean_think(rng: random.Random, n_tokens: int) -> str:
    """Trace text that passes every stage-1 check: distinct tokens, no lexicon hits."""
    return " ".join(f"w{i}x{rng.randrange(10**6)}" for i in range(n_tokens))


class FakeEndpoint:
    """Scripted chat endpoint; replays the given texts in order."""

    def __init__(self, texts):
        self.texts = list(texts)
        self.calls = []

    def complete(self, request, policy=None):
        self.calls.append(request)
        return ChatResponse(text=self.texts[len(self.calls) - 1], finish_reason=FinishReason.STOP)


# ------------------------------------------------- trace parsing oracle

_TAGS = ("<think>", "</think>", "<answer>", "</answer>")


def trace_verdict_oracle(raw: str):
    """Regex-based reimplementation of the documented trace parse semantics.

    Returns ("ok", think, answer, stray) or the error kind string.
    """
    ot = [m.start() for m in re.finditer(re.escape("<think>"), raw)]
    ct = [m.start() for m in re.finditer(re.escape("</think>"), raw)]
    oa = [m.start() for m in re.finditer(re.escape("<answer>"), raw)]
    ca = [m.start() for m in re.finditer(re.escape("</answer>"), raw)]
    if not ot and not ct:
        return "missing_think"
    if not oa and not ca:
        return "missing_answer"
    if max(len(ot), len(ct), len(oa), len(ca)) > 1:
        return "duplicate_block"
    if len(ot) != len(ct) or len(oa) != len(ca):
        return "unclosed_tag"
    if ct[0] < ot[0] or ca[0] < oa[0]:
        return "unclosed_tag"
    if oa[0] < ct[0]:
        return "answer_before_think"
    think_match = re.search(r"<think>(.*)</think>", raw, re.DOTALL)
    answer_match = re.search(r"<answer>(.*)</answer>", raw, re.DOTALL)
    first, second = sorted([think_match.span(), answer_match.span()])
    outside = raw[: first[0]] + raw[first[1] : second[0]] + raw[second[1] :]
    return ("ok", think_match.group(1).strip(), answer_match.group(1).strip(), bool(outside.strip()))


def mutated_traces(count: int, seed: int = 0) -> list[str]:
    """Well-formed traces with planted tag deletions, duplications, reorders."""
    rng = random.Random(seed)
    out = []
    for i in range(count):
        think = " ".join(f"s{j}k{rng.randrange(100)}" for j in range(5 + rng.randrange(10)))
        answer = f"value {rng.randrange(50)}"
        base = f"<think>{think}</think>\n<answer>{answer}</answer>"
        mutation = i % 10
        if mutation == 0:
            text = base  # untouched
        elif mutation == 1:
            text = base.replace("</think>", "", 1)  # deletion
        elif mutation == 2:
            text = base.replace("<answer>", "", 1)
        elif mutation == 3:
            text = base + f"\n<answer>extra {i}</answer>"  # duplication
        elif mutation == 4:
            text = f"<think>dup</think>{base}"
        elif mutation == 5:
            text = f"<answer>{answer}</answer>\n<think>{think}</think>"  # reorder
        elif mutation == 6:
            text = f"<think>{think}<answer>{answer}</answer></think>"  # nesting
        elif mutation == 7:
            text = f"prose before {base} prose after"  # stray text
        elif mutation == 8:
            text = f"</think>{think}<think>\n<answer>{answer}</answer>"  # inverted pair
        else:
            text = base.replace("<think>", "", 1).replace("</think>", "", 1)  # no think pair
        out.append(text)
    return out


# ------------------------------------------------- scalar distance oracles


def euclid(a, b) -> float:
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))

def cosine(a, b) -> float:
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0.0 and nb == 0.0:
        return 0.0
    if na == 0.0 or nb == 0.0:
        return 1.0
    sim = sum(x * y for x, y in zip(a, b)) / (na * nb)
    return 1.0 - max(-1.0, min(1.0, sim))


def scalar_distance(a, b, metric: str) -> float:
    return euclid(a, b) if metric == "euclidean" else cosine(a, b)


# ------------------------------------------------- naive reference dbscan


def reference_dbscan(points, eps: float, min_pts: int, metric: str) -> list[int]:
    """O(n^2) scalar-loop implementation of the documented clustering semantics."""
    n = len(points)
    neighbors: list[list[int]] = []
    for i in range(n):
        row = []
        for j in range(n):
            d = 0.0 if i == j else scalar_distance(points[i], points[j], metric)
            if d <= eps:
                row.append(j)
        neighbors.append(row)
    core = [len(neighbors[i]) >= min_pts for i in range(n)]

    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(x: int, y: int) -> None:
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[max(rx, ry)] = min(rx, ry)

    for i in range(n):
        if core[i]:
            for j in neighbors[i]:
                if core[j]:
                    union(i, j)

    labels = [-1] * n
    component_to_cluster: dict[int, int] = {}
    for i in range(n):
        if core[i]:
            root = find(i)
            if root not in component_to_cluster:
                component_to_cluster[root] = len(component_to_cluster)
            labels[i] = component_to_cluster[root]
    for i in range(n):
        if not core[i]:
            owners = [labels[j] for j in neighbors[i] if core[j]]
            if owners:
                labels[i] = min(owners)
    return labels


def canonical_partition(labels) -> tuple[frozenset, frozenset]:
    clusters: dict[int, set[int]] = {}
    noise: set[int] = set()
    for i, label in enumerate(labels):
        if label == -1:
            noise.add(i)
        else:
            clusters.setdefault(label, set()).add(i)
    return frozenset(frozenset(c) for c in clusters.values()), frozenset(noise)


# ------------------------------------------------- stage-1 planted corpus

PLANTED_CODES = (
    RejectCode.MISSING_TAGS,
    RejectCode.TOO_SHORT,
    RejectCode.TOO_LONG,
    RejectCode.PLACEHOLDER,
    RejectCode.REPETITION,
)


def build_planted_stage1_corpus(seed: int = 0, *, clean: int = 950, per_code: int = 10):
    """Synthetic corpus with exactly ``per_code`` planted violations per code."""
    rng = random.Random(seed)
    annotation = Annotation(difficulty=3, quality=5, tags=("reasoning",))
    records: list[tuple[CuratedRecord, RejectCode | None]] = []

    def record_for(i: int, think: str | None) -> CuratedRecord:
        seed_sample = make_seed(i, category="planted")
        trace = make_trace(think) if think is not None else None
        return CuratedRecord(
            seed=seed_sample, trace=trace, annotation=annotation, status=Status.ANNOTATED
        )

    index = 0
    for _ in range(clean):
        records.append((record_for(index, clean_think(rng, 25 + rng.randrange(150))), None))
        index += 1
    for code in PLANTED_CODES:
        for _ in range(per_code):
            if code is RejectCode.MISSING_TAGS:
                think = None
            elif code is RejectCode.TOO_SHORT:
                think = clean_think(rng, 5 + rng.randrange(14))  # at most 19 tokens
            elif code is RejectCode.TOO_LONG:
                think = clean_think(rng, 4001 + rng.randrange(400))
            elif code is RejectCode.PLACEHOLDER:
                think = clean_think(rng, 30) + " lorem ipsum " + clean_think(rng, 30)
            else:  # repetition
                think = "alpha beta gamma " * 30
            records.append((record_for(index, think), code))
            index += 1
    rng.shuffle(records)
    return records
