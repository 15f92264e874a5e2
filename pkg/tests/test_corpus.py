"""Seed pool gating, origin separation, and on-disk round trips."""


import pytest

from testforge import generate
from testforge.corpus import EXTERNAL_ORIGIN, CorpusPool, seed_id_for
from testforge.corpus import testlang_origin as structured_origin


def cov(*nums):
    return frozenset(("t.c", n) for n in nums)


class TestGate:
    def test_first_seed_is_added(self):
        pool = CorpusPool()
        result = pool.add_seed(b"one", EXTERNAL_ORIGIN, cov(1))
        assert result.status == "added"
        assert result.seed_id == seed_id_for(b"one")

    def test_same_bytes_twice_is_duplicate(self):
        pool = CorpusPool()
        first = pool.add_seed(b"one", EXTERNAL_ORIGIN, cov(1))
        again = pool.add_seed(b"one", EXTERNAL_ORIGIN, cov(2, 3))
        assert again.status == "duplicate"
        assert again.seed_id == first.seed_id
        assert len(pool) == 1

    def test_subset_coverage_without_crash_is_not_interesting(self):
        pool = CorpusPool()
        pool.add_seed(b"one", EXTERNAL_ORIGIN, cov(1, 2, 3))
        result = pool.add_seed(b"two", EXTERNAL_ORIGIN, cov(2, 3))
        assert result.status == "not_interesting"
        assert len(pool) == 1

    def test_crash_is_always_interesting(self):
        pool = CorpusPool()
        pool.add_seed(b"one", EXTERNAL_ORIGIN, cov(1, 2, 3))
        result = pool.add_seed(b"two", EXTERNAL_ORIGIN, cov(2), crash=True)
        assert result.status == "added"

    def test_union_coverage_invariant(self):
        pool = CorpusPool()
        pool.add_seed(b"a", EXTERNAL_ORIGIN, cov(1))
        pool.add_seed(b"b", EXTERNAL_ORIGIN, cov(2, 5))
        pool.add_seed(b"c", EXTERNAL_ORIGIN, cov(9))
        union = set()
        for entry in pool.entries.values():
            union |= entry.coverage
        assert pool.union_coverage == union

    def test_external_origin_rejects_trees(self, simple_lookup):
        _, ast = generate(simple_lookup, 0)
        pool = CorpusPool()
        with pytest.raises(ValueError):
            pool.add_seed(b"x", EXTERNAL_ORIGIN, cov(1), ast=ast)

    def test_structured_origin_requires_tree(self):
        pool = CorpusPool()
        with pytest.raises(ValueError):
            pool.add_seed(b"x", structured_origin("abc"), cov(1))


class TestPersistence:
    def build_pool(self, simple_lookup):
        pool = CorpusPool()
        blob, ast = generate(simple_lookup, 1)
        pool.add_seed(blob, structured_origin("docid123"), cov(1, 2), ast=ast)
        pool.add_seed(b"raw-bytes", EXTERNAL_ORIGIN, cov(7), crash=True)
        return pool

    def test_roundtrip_equality_including_trees(self, tmp_path, simple_lookup):
        pool = self.build_pool(simple_lookup)
        pool.persist(tmp_path)
        loaded, warnings = CorpusPool.load(tmp_path)
        assert warnings == []
        assert loaded.union_coverage == pool.union_coverage
        assert set(loaded.entries) == set(pool.entries)
        for seed_id, entry in pool.entries.items():
            other = loaded.entries[seed_id]
            assert (other.data, other.origin, other.coverage, other.crash,
                    other.created_seq) == (entry.data, entry.origin,
                                           entry.coverage, entry.crash,
                                           entry.created_seq)
            if entry.ast is None:
                assert other.ast is None
            else:
                assert other.ast == entry.ast

    def test_corrupt_sidecar_skips_entry_and_loads_rest(self, tmp_path, simple_lookup):
        pool = self.build_pool(simple_lookup)
        pool.persist(tmp_path)
        structured = next(e for e in pool.entries.values() if e.is_structured)
        meta = tmp_path / "testlang" / f"{structured.id}.meta"
        meta.write_text(meta.read_text()[:10])  # truncate
        loaded, warnings = CorpusPool.load(tmp_path)
        assert [w.code for w in warnings] == ["CorruptEntry"]
        assert len(loaded) == len(pool) - 1

    def test_unknown_files_warn_but_load(self, tmp_path, simple_lookup):
        pool = self.build_pool(simple_lookup)
        pool.persist(tmp_path)
        (tmp_path / "external" / "README.txt").write_text("hello")
        loaded, warnings = CorpusPool.load(tmp_path)
        assert any(w.code == "UnknownFile" for w in warnings)
        assert len(loaded) == len(pool)

    def test_empty_directory_is_empty_pool(self, tmp_path):
        loaded, warnings = CorpusPool.load(tmp_path)
        assert len(loaded) == 0 and warnings == []

    def test_tampered_bytes_detected(self, tmp_path, simple_lookup):
        pool = self.build_pool(simple_lookup)
        pool.persist(tmp_path)
        victim = next(iter(pool.entries))
        sub = "testlang" if pool.entries[victim].is_structured else "external"
        (tmp_path / sub / f"{victim}.bin").write_bytes(b"swapped")
        loaded, warnings = CorpusPool.load(tmp_path)
        assert any(w.code == "CorruptEntry" for w in warnings)

    def test_sequencing_survives_reload(self, tmp_path, simple_lookup):
        pool = self.build_pool(simple_lookup)
        pool.persist(tmp_path)
        loaded, _ = CorpusPool.load(tmp_path)
        result = loaded.add_seed(b"new", EXTERNAL_ORIGIN, cov(99))
        assert result.status == "added"
        new_entry = loaded.entries[result.seed_id]
        assert new_entry.created_seq == max(
            e.created_seq for e in pool.entries.values()) + 1


class TestStats:
    def test_counts(self, simple_lookup):
        pool = CorpusPool()
        blob, ast = generate(simple_lookup, 2)
        pool.add_seed(blob, structured_origin("d"), cov(1), ast=ast)
        pool.add_seed(b"x", EXTERNAL_ORIGIN, cov(2), crash=True)
        stats = pool.stats()
        assert stats == {"seeds": 2, "testlang_seeds": 1, "external_seeds": 1,
                         "crashes": 1, "union_coverage": 2}
