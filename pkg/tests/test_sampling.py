import json
import random
from collections import Counter

import pytest

from cotforge.records import CuratedRecord, encode_record, stable_id
from cotforge.sampling import IngestError, SamplingPlan, ingest, stratified_sample

from helpers import make_seed


def write_pool(path, samples):
    with open(path, "w", encoding="utf-8") as handle:
        for sample in samples:
            handle.write(encode_record(CuratedRecord(seed=sample)) + "\n")


def bare_line(**kwargs):
    return json.dumps(kwargs)


class TestIngest:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert list(ingest([path])) == []

    def test_three_files_line_count_oracle(self, tmp_path):
        paths = []
        offset = 0
        for n, name in ((30, "a"), (50, "b"), (40, "c")):
            path = tmp_path / f"{name}.jsonl"
            write_pool(path, [make_seed(offset + i, source=name) for i in range(n)])
            paths.append(path)
            offset += n
        expected = sum(
            sum(1 for line in path.read_text().splitlines() if line.strip()) for path in paths
        )
        assert expected == 120
        assert len(list(ingest(paths))) == expected

    def test_duplicate_id_across_files(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_pool(a, [make_seed(1), make_seed(2)])
        write_pool(b, [make_seed(2), make_seed(3)])
        with pytest.raises(IngestError, match="pool-00002"):
            list(ingest([a, b]))

    def test_bare_seed_adapter(self, tmp_path):
        path = tmp_path / "raw.jsonl"
        path.write_text(
            "\n".join(
                [
                    bare_line(id="keep-me", category="c", instruction="q1", image_ref="i"),
                    bare_line(category="c", instruction="q2", image_ref="i", native_key="n2"),
                    bare_line(category="c", instruction="q3", image_ref="i3"),
                ]
            )
        )
        samples = list(ingest([path]))
        assert samples[0].id == "keep-me"
        assert samples[1].id == stable_id("raw", "n2")
        assert samples[2].id == stable_id("raw", "q3\x1fi3")
        assert all(s.source_dataset == "raw" for s in samples[1:])

    def test_parse_error_names_file_and_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(bare_line(category="c", instruction="ok") + "\n{oops\n")
        with pytest.raises(IngestError, match="bad.jsonl:2"):
            list(ingest([path]))

    def test_invalid_seed_reported(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(bare_line(category="", instruction="q"))
        with pytest.raises(IngestError, match="category"):
            list(ingest([path]))


def pool_of(sizes: dict[str, int]):
    samples = []
    i = 0
    for category, size in sizes.items():
        for _ in range(size):
            samples.append(make_seed(i, category=category))
            i += 1
    return samples


class TestStratifiedSample:
    def test_paper_default_cap(self):
        assert SamplingPlan().per_category_cap == 20000

    def test_caps_apply_per_category(self):
        pool = pool_of({"a": 5, "b": 30, "c": 50})
        plan = SamplingPlan(per_category_cap=20, random_seed=1)
        out = stratified_sample(pool, plan)
        counts = Counter(s.category for s in out)
        assert counts == {"a": 5, "b": 20, "c": 20}

    def test_cap_inactive_returns_whole_pool(self):
        pool = pool_of({"solo": 12})
        out = stratified_sample(pool, SamplingPlan(per_category_cap=100, random_seed=0))
        assert sorted(s.id for s in out) == sorted(s.id for s in pool)

    def test_output_sorted_by_id_and_deterministic(self):
        pool = pool_of({"a": 40, "b": 40})
        plan = SamplingPlan(per_category_cap=10, random_seed=5)
        first = stratified_sample(pool, plan)
        second = stratified_sample(pool, plan)
        assert first == second
        assert [s.id for s in first] == sorted(s.id for s in first)

    def test_different_seeds_differ(self):
        pool = pool_of({"a": 200})
        a = stratified_sample(pool, SamplingPlan(per_category_cap=10, random_seed=0))
        b = stratified_sample(pool, SamplingPlan(per_category_cap=10, random_seed=1))
        assert {s.id for s in a} != {s.id for s in b}

    def test_target_total_largest_remainder(self):
        pool = pool_of({"a": 5, "b": 20, "c": 20})
        plan = SamplingPlan(per_category_cap=100, target_total=30, random_seed=2)
        out = stratified_sample(pool, plan)
        counts = Counter(s.category for s in out)
        # quotas 30*(5,20,20)/45 = (3.33, 13.33, 13.33); remainders tie, name order wins
        assert counts == {"a": 4, "b": 13, "c": 13}
        assert sum(counts.values()) == 30

    def test_target_total_not_binding(self):
        pool = pool_of({"a": 5, "b": 5})
        plan = SamplingPlan(per_category_cap=3, target_total=100, random_seed=0)
        out = stratified_sample(pool, plan)
        assert len(out) == 6

    def test_randomized_pools_never_exceed_cap(self):
        rng = random.Random(11)
        for trial in range(25):
            sizes = {f"c{j}": 1 + rng.randrange(500) for j in range(1 + rng.randrange(10))}
            cap = 1 + rng.randrange(50)
            plan = SamplingPlan(per_category_cap=cap, random_seed=trial)
            out = stratified_sample(pool_of(sizes), plan)
            counts = Counter(s.category for s in out)
            for category, size in sizes.items():
                assert counts.get(category, 0) == min(size, cap)
