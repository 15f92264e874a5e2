"""Persistent, deduplicated seed pools with origin separation.

Seeds from document-based generation keep their value tree so structural
mutation stays well-defined; seeds from anywhere else are raw bytes and never
acquire a tree. Admission is gated on interestingness: a seed enters the pool
only if it crashed the target or its coverage adds at least one new line.

On-disk layout (the stable contract):

    <dir>/testlang/<id>.bin    seed bytes
    <dir>/testlang/<id>.meta   JSON: origin, coverage, crash, created_seq
    <dir>/testlang/<id>.ast    JSON value tree (testlang-origin seeds only)
    <dir>/external/<id>.bin    + .meta, same scheme, never an .ast
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .ast_tree import TestlangAst, ast_from_json, ast_to_json

EXTERNAL_ORIGIN = "external"


def testlang_origin(document_id: str) -> str:
    return f"testlang:{document_id}"


def seed_id_for(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class SeedEntry:
    id: str
    data: bytes
    origin: str  # "testlang:<doc id>" | "external"
    coverage: frozenset
    crash: bool
    created_seq: int
    ast: Optional[TestlangAst] = None

    @property
    def is_structured(self) -> bool:
        return self.origin.startswith("testlang:")


@dataclass(frozen=True)
class AddResult:
    status: str  # "added" | "duplicate" | "not_interesting"
    seed_id: Optional[str] = None


@dataclass(frozen=True)
class CorpusWarning:
    code: str  # "CorruptEntry" | "UnknownFile"
    path: str
    message: str


class CorpusPool:
    def __init__(self) -> None:
        self.entries: dict[str, SeedEntry] = {}
        self.union_coverage: set = set()
        self._next_seq = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, seed_id: str) -> bool:
        return seed_id in self.entries

    def entries_in_order(self) -> list[SeedEntry]:
        return sorted(self.entries.values(), key=lambda e: e.created_seq)

    def add_seed(self, data: bytes, origin: str, coverage, crash: bool = False,
                 ast: Optional[TestlangAst] = None) -> AddResult:
        if origin == EXTERNAL_ORIGIN and ast is not None:
            raise ValueError("external-origin seeds never carry a value tree")
        if origin.startswith("testlang:") and ast is None:
            raise ValueError("testlang-origin seeds must carry their value tree")
        coverage = frozenset(coverage)
        seed_id = seed_id_for(data)
        if seed_id in self.entries:
            return AddResult("duplicate", seed_id)
        if not crash and not (coverage - self.union_coverage):
            return AddResult("not_interesting")
        entry = SeedEntry(id=seed_id, data=data, origin=origin, coverage=coverage,
                          crash=crash, created_seq=self._next_seq, ast=ast)
        self._next_seq += 1
        self.entries[seed_id] = entry
        self.union_coverage |= coverage
        return AddResult("added", seed_id)

    def stats(self) -> dict:
        by_origin = {"testlang": 0, "external": 0}
        crashes = 0
        for e in self.entries.values():
            by_origin["testlang" if e.is_structured else "external"] += 1
            crashes += e.crash
        return {
            "seeds": len(self.entries),
            "testlang_seeds": by_origin["testlang"],
            "external_seeds": by_origin["external"],
            "crashes": crashes,
            "union_coverage": len(self.union_coverage),
        }

    # -- persistence ----------------------------------------------------------

    def persist(self, directory) -> None:
        root = Path(directory)
        for sub in ("testlang", "external"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        for entry in self.entries.values():
            sub = root / ("testlang" if entry.is_structured else "external")
            (sub / f"{entry.id}.bin").write_bytes(entry.data)
            meta = {
                "origin": entry.origin,
                "coverage": sorted([p, l] for p, l in entry.coverage),
                "crash": entry.crash,
                "created_seq": entry.created_seq,
            }
            (sub / f"{entry.id}.meta").write_text(
                json.dumps(meta, indent=2) + "\n", encoding="utf-8")
            if entry.ast is not None:
                (sub / f"{entry.id}.ast").write_text(
                    json.dumps(ast_to_json(entry.ast)) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory) -> tuple["CorpusPool", list[CorpusWarning]]:
        root = Path(directory)
        pool = cls()
        warnings: list[CorpusWarning] = []
        loaded: list[SeedEntry] = []
        for sub in ("testlang", "external"):
            base = root / sub
            if not base.is_dir():
                continue
            for path in sorted(base.iterdir()):
                if path.suffix in (".meta", ".ast"):
                    if not path.with_suffix(".bin").exists():
                        warnings.append(CorpusWarning(
                            "UnknownFile", str(path), "sidecar without seed bytes"))
                    continue
                if path.suffix != ".bin":
                    warnings.append(CorpusWarning(
                        "UnknownFile", str(path), "not part of the corpus layout"))
                    continue
                entry, warning = _load_entry(path)
                if warning is not None:
                    warnings.append(warning)
                if entry is not None:
                    loaded.append(entry)
        loaded.sort(key=lambda e: e.created_seq)
        for entry in loaded:
            pool.entries[entry.id] = entry
            pool.union_coverage |= entry.coverage
            pool._next_seq = max(pool._next_seq, entry.created_seq + 1)
        return pool, warnings


def _load_entry(bin_path: Path) -> tuple[Optional[SeedEntry], Optional[CorpusWarning]]:
    data = bin_path.read_bytes()
    seed_id = bin_path.stem
    if seed_id_for(data) != seed_id:
        return None, CorpusWarning("CorruptEntry", str(bin_path),
                                   "seed bytes do not match their content hash")
    meta_path = bin_path.with_suffix(".meta")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        origin = meta["origin"]
        coverage = frozenset((p, int(l)) for p, l in meta["coverage"])
        crash = bool(meta["crash"])
        created_seq = int(meta["created_seq"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        return None, CorpusWarning("CorruptEntry", str(meta_path),
                                   f"unreadable metadata sidecar: {exc}")
    ast = None
    ast_path = bin_path.with_suffix(".ast")
    if origin.startswith("testlang:"):
        try:
            ast = ast_from_json(json.loads(ast_path.read_text(encoding="utf-8")))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            return None, CorpusWarning("CorruptEntry", str(ast_path),
                                       f"unreadable value tree sidecar: {exc}")
    return SeedEntry(id=seed_id, data=data, origin=origin, coverage=coverage,
                     crash=crash, created_seq=created_seq, ast=ast), None
