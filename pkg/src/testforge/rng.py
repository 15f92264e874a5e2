"""Deterministic, splittable random streams keyed by structural paths.

Every draw in generation and mutation comes from a stream derived from a
master seed plus a path string (usually a field path). Streams for distinct
paths are independent, so editing one field's spec never perturbs the draws
made for its siblings, and replaying with the same master seed reproduces a
campaign exactly.
"""

from __future__ import annotations

import hashlib
import random

_KEY_BYTES = 16


class SplitRandom:
    """A seeded source of independent per-path random substreams."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._key = (self.seed % (1 << (8 * _KEY_BYTES))).to_bytes(_KEY_BYTES, "little")

    def stream(self, path: str) -> random.Random:
        """Return the stream for `path`; same (seed, path) -> same stream."""
        digest = hashlib.blake2b(path.encode("utf-8"), key=self._key, digest_size=8)
        return random.Random(int.from_bytes(digest.digest(), "big"))

    def derive(self, label: str) -> "SplitRandom":
        """Split off a child source, e.g. one per campaign iteration."""
        digest = hashlib.blake2b(label.encode("utf-8"), key=self._key, digest_size=_KEY_BYTES)
        return SplitRandom(int.from_bytes(digest.digest(), "little"))

    def __repr__(self) -> str:  # pragma: no cover
        return f"SplitRandom(seed={self.seed})"


def as_split_random(source: "SplitRandom | int") -> SplitRandom:
    if isinstance(source, SplitRandom):
        return source
    return SplitRandom(source)
