"""Directed selection of documents and corpus seeds.

Seeds are scored by how many key lines of the still-active bug candidates
their recorded coverage touches; candidates whose vulnerable lines show up in
a crash are retired. Selection mixes three branches so scoring can guide the
search without starving unscored seeds: a fully random pick, a random pick
among seeds that already touched a key line, and a score-weighted pick, at
25/25/50.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .model import TestlangDoc, doc_id

UNIFORM_SHARE = 0.25
POSITIVE_SHARE = 0.25
WEIGHT_SMOOTHING = 1  # keeps zero-score seeds reachable in the weighted branch
DEPRIORITIZED_FACTOR = 0.1
RECENCY_HALVING = 0.5  # weight halves every 1/0.5 = 2 ranks from the newest


class EmptyPool(Exception):
    pass


@dataclass
class BugCandidate:
    id: str
    vulnerable_lines: frozenset
    key_lines: frozenset
    priority: int = 1
    triggered: bool = False


def load_candidates(path) -> list[BugCandidate]:
    """Bug-candidate file: JSON list of {id, vulnerable_lines, key_lines, priority}."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    candidates = []
    for obj in raw:
        candidates.append(BugCandidate(
            id=str(obj["id"]),
            vulnerable_lines=frozenset((p, int(l)) for p, l in obj.get("vulnerable_lines", [])),
            key_lines=frozenset((p, int(l)) for p, l in obj.get("key_lines", [])),
            priority=int(obj.get("priority", 1)),
        ))
    return candidates


@dataclass(frozen=True)
class SeedScore:
    seed_id: str
    score: int
    stale: bool = False


def score_coverage(coverage: frozenset, candidates: Sequence[BugCandidate]) -> int:
    return sum(c.priority * len(coverage & c.key_lines)
               for c in candidates if not c.triggered)


def score_seeds(pool, candidates: Sequence[BugCandidate]) -> list[SeedScore]:
    return [SeedScore(seed_id=e.id, score=score_coverage(e.coverage, candidates))
            for e in _entries(pool)]


def mark_triggered(candidates: Sequence[BugCandidate],
                   crash_coverage: frozenset) -> list[BugCandidate]:
    """Retire candidates whose vulnerable lines appear in a crash's coverage."""
    newly = []
    for c in candidates:
        if not c.triggered and c.vulnerable_lines & crash_coverage:
            c.triggered = True
            newly.append(c)
    return newly


@dataclass(frozen=True)
class SeedChoice:
    entry: object
    branch: str  # "uniform" | "positive" | "weighted"


def select_seed(pool, candidates: Sequence[BugCandidate], rng: random.Random,
                uniform_share: float = UNIFORM_SHARE,
                positive_share: float = POSITIVE_SHARE,
                smoothing: int = WEIGHT_SMOOTHING) -> SeedChoice:
    entries = _entries(pool)
    if not entries:
        raise EmptyPool("no seeds to select from")
    roll = rng.random()
    if roll < uniform_share:
        return SeedChoice(entries[rng.randrange(len(entries))], "uniform")
    scores = [score_coverage(e.coverage, candidates) for e in entries]
    if roll < uniform_share + positive_share:
        positive = [e for e, s in zip(entries, scores) if s > 0]
        chosen = positive if positive else entries
        return SeedChoice(chosen[rng.randrange(len(chosen))], "positive")
    weights = [s + smoothing for s in scores]
    return SeedChoice(rng.choices(entries, weights=weights, k=1)[0], "weighted")


def _entries(pool) -> list:
    if hasattr(pool, "entries_in_order"):
        return pool.entries_in_order()
    return list(pool)


# ---------------------------------------------------------------------------
# Document scheduling


@dataclass
class TestlangEntry:
    doc: TestlangDoc
    doc_id: str
    created_seq: int
    use_count: int = 0
    deprioritized: bool = False
    lines_achieved: int = 0


@dataclass
class TestlangPool:
    entries: list = field(default_factory=list)
    recency_halving: float = RECENCY_HALVING
    deprioritized_factor: float = DEPRIORITIZED_FACTOR
    _next_seq: int = 0

    def add(self, doc: TestlangDoc) -> TestlangEntry:
        entry = TestlangEntry(
            doc=doc,
            doc_id=doc_id(doc),
            created_seq=self._next_seq,
            deprioritized=doc.metadata.deprioritized,
        )
        self._next_seq += 1
        self.entries.append(entry)
        return entry

    def by_doc_id(self, wanted: str) -> Optional[TestlangEntry]:
        for entry in self.entries:
            if entry.doc_id == wanted:
                return entry
        return None

    def select(self, rng: random.Random) -> TestlangEntry:
        """Weighted pick favoring recent, non-deprioritized, rarely-used docs."""
        if not self.entries:
            raise EmptyPool("no documents to select from")
        newer_seqs = sorted({e.created_seq for e in self.entries}, reverse=True)
        rank_of = {seq: rank for rank, seq in enumerate(newer_seqs)}
        weights = []
        for entry in self.entries:
            w = 2.0 ** (-self.recency_halving * rank_of[entry.created_seq])
            if entry.deprioritized:
                w *= self.deprioritized_factor
            w *= 1.0 / (1.0 + entry.use_count)
            weights.append(w)
        chosen = rng.choices(self.entries, weights=weights, k=1)[0]
        chosen.use_count += 1
        return chosen

    def __len__(self) -> int:
        return len(self.entries)


def select_testlang(pool: TestlangPool, rng: random.Random) -> str:
    return pool.select(rng).doc_id


def candidates_to_json(candidates: Iterable[BugCandidate]) -> list:
    return [
        {
            "id": c.id,
            "vulnerable_lines": sorted([p, l] for p, l in c.vulnerable_lines),
            "key_lines": sorted([p, l] for p, l in c.key_lines),
            "priority": c.priority,
        }
        for c in candidates
    ]
