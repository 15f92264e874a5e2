"""Deterministic left-to-right parse of a blob against a document.

On success the full blob is consumed and the concrete value tree comes back;
on mismatch a typed report pinpoints the offending field. Mismatch codes:

- Underflow: fewer bytes remain than a field's parse requires.
- SizeRefMismatch: a size field's decoded value disagrees with the actual
  extent of the content it measures (negative, or leaving trailing bytes).
- ConstraintViolated: a decoded value breaks the field's value constraint,
  or transformed content fails to decode.
- TrailingBytes: bytes remain after the record tree is exhausted, or a
  variable tail field overruns its declared maximum.
"""

from __future__ import annotations

from typing import Optional

from . import generators
from .ast_tree import AstNode, TestlangAst
from .model import (
    ConstConstraint,
    EnumConstraint,
    Field,
    FixedSize,
    RangeConstraint,
    RangeSize,
    Record,
    RefSize,
    TerminatorConstraint,
    TestlangDoc,
    doc_id,
)


class StructureMismatch(Exception):
    def __init__(self, code: str, field: str, message: str, offset: int = 0):
        self.code = code
        self.field = field
        self.offset = offset
        super().__init__(f"{code} at {field or '<end>'} (offset {offset}): {message}")


class _Parser:
    def __init__(self, doc: TestlangDoc, blob: bytes):
        self.doc = doc
        self.blob = blob
        self.pos = 0
        # Path of the size field backing the most recently parsed ref-sized
        # leaf; trailing bytes at the end are attributed to it.
        self.last_ref_size_field: Optional[str] = None

    @property
    def remaining(self) -> int:
        return len(self.blob) - self.pos

    def take(self, n: int, path: str) -> bytes:
        if n > self.remaining:
            raise StructureMismatch(
                "Underflow", path,
                f"need {n} bytes, {self.remaining} remain", self.pos)
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    # -- records ------------------------------------------------------------

    def parse_record(self, record: Record, path: str) -> AstNode:
        start = self.pos
        scope: dict[str, tuple[int, str]] = {}
        node = AstNode(path=path, kind="record", offset=start)
        for f in record.fields:
            child = self.parse_field(f, f"{path}.{f.name}", scope)
            if f.kind == "int":
                scope[f.name] = (child.value, child.path)
            node.children.append(child)
        node.length = self.pos - start
        return node

    # -- fields -------------------------------------------------------------

    def parse_field(self, f: Field, path: str, scope: dict) -> AstNode:
        if f.kind == "int":
            return self.parse_int(f, path)
        if f.kind in ("bytes", "string", "custom"):
            return self.parse_content(f, path, scope)
        if f.kind == "array":
            return self.parse_array(f, path, scope)
        if f.kind == "record_ref":
            target = self.doc.record_named(f.record or "")
            if target is None:
                raise StructureMismatch("Underflow", path,
                                        f"unresolved record {f.record!r}", self.pos)
            self.last_ref_size_field = None
            return self.parse_record(target, path)
        raise StructureMismatch("Underflow", path, f"unparseable kind {f.kind!r}", self.pos)

    def parse_int(self, f: Field, path: str) -> AstNode:
        start = self.pos
        width = f.width or 8
        raw = self.take(width // 8, path)
        value = int.from_bytes(raw, f.endianness or "big", signed=f.signed)
        node = AstNode(path=path, kind="int", offset=start, length=width // 8, value=value)
        self.check_constraint(f, path, value)
        self.last_ref_size_field = None
        return node

    def parse_content(self, f: Field, path: str, scope: dict) -> AstNode:
        start = self.pos
        size = f.size
        size_field_path: Optional[str] = None
        terminated = isinstance(f.constraint, TerminatorConstraint)

        if isinstance(size, FixedSize):
            span = self.take(size.n, path)
            content = span
        elif isinstance(size, RefSize):
            value, size_field_path = scope[size.ref]
            if value < 0:
                raise StructureMismatch(
                    "SizeRefMismatch", size_field_path,
                    f"size field {size.ref!r} decodes to negative length {value}", self.pos)
            span = self.take(value, path)
            content = span
        elif terminated:
            seq = f.constraint.sequence  # type: ignore[union-attr]
            idx = self.blob.find(seq, self.pos)
            if idx < 0:
                raise StructureMismatch(
                    "Underflow", path,
                    f"terminator {seq!r} not found before end of input", self.pos)
            content = self.blob[self.pos:idx]
            self.pos = idx + len(seq)
            if isinstance(size, RangeSize) and not size.lo <= len(content) <= size.hi:
                raise StructureMismatch(
                    "ConstraintViolated", path,
                    f"terminated content length {len(content)} outside "
                    f"[{size.lo}, {size.hi}]", start)
        else:
            # Variable tail: the validator only admits this shape in final
            # position, so the field covers everything that remains.
            content = self.blob[self.pos:]
            self.pos = len(self.blob)
            if isinstance(size, RangeSize):
                if len(content) < size.lo:
                    raise StructureMismatch(
                        "Underflow", path,
                        f"tail length {len(content)} below minimum {size.lo}", start)
                if len(content) > size.hi:
                    raise StructureMismatch(
                        "TrailingBytes", path,
                        f"tail length {len(content)} above maximum {size.hi}", start)

        if f.encoder is not None:
            try:
                logical = generators.invert_encoder(f.encoder, bytes(content))
            except generators.TransformError as exc:
                raise StructureMismatch("ConstraintViolated", path, str(exc), start) from exc
        else:
            logical = bytes(content)

        if not terminated:
            self.check_constraint(f, path, logical)
        node = AstNode(path=path, kind=f.kind, offset=start,
                       length=self.pos - start, value=logical)
        self.last_ref_size_field = size_field_path
        return node

    def parse_array(self, f: Field, path: str, scope: dict) -> AstNode:
        start = self.pos
        node = AstNode(path=path, kind="array", offset=start)
        elem = f.element
        assert elem is not None
        count = f.count

        if isinstance(count, FixedSize):
            wanted: Optional[int] = count.n
        elif isinstance(count, RefSize):
            value, size_field_path = scope[count.ref]
            if value < 0:
                raise StructureMismatch(
                    "SizeRefMismatch", size_field_path,
                    f"count field {count.ref!r} decodes to negative count {value}", self.pos)
            wanted = value
        else:
            wanted = None  # variable tail array: consume to exhaustion

        i = 0
        while True:
            if wanted is not None:
                if i >= wanted:
                    break
            else:
                if self.remaining == 0:
                    break
                if isinstance(count, RangeSize) and i >= count.hi:
                    raise StructureMismatch(
                        "TrailingBytes", path,
                        f"array exceeds maximum count {count.hi}", self.pos)
            child = self.parse_field(elem, f"{path}[{i}]", {})
            node.children.append(child)
            i += 1

        if wanted is None and isinstance(count, RangeSize) and i < count.lo:
            raise StructureMismatch(
                "Underflow", path, f"array count {i} below minimum {count.lo}", self.pos)
        node.length = self.pos - start
        if isinstance(f.count, RefSize):
            self.last_ref_size_field = scope[f.count.ref][1]
        return node

    # -- constraints ----------------------------------------------------------

    def check_constraint(self, f: Field, path: str, value) -> None:
        c = f.constraint
        if c is None or isinstance(c, TerminatorConstraint):
            return
        if isinstance(c, RangeConstraint):
            if not c.lo <= value <= c.hi:
                raise StructureMismatch(
                    "ConstraintViolated", path,
                    f"value {value} outside [{c.lo}, {c.hi}]", self.pos)
        elif isinstance(c, EnumConstraint):
            if value not in c.values:
                raise StructureMismatch(
                    "ConstraintViolated", path,
                    f"value {value!r} not in enum", self.pos)
        elif isinstance(c, ConstConstraint):
            if value != c.value:
                raise StructureMismatch(
                    "ConstraintViolated", path,
                    f"value {value!r} != const {c.value!r}", self.pos)


def structure_check(doc: TestlangDoc, blob: bytes) -> TestlangAst:
    """Parse `blob` against `doc`; full consumption required.

    Returns the concrete value tree, or raises StructureMismatch pinpointing
    the first offending field.
    """
    if doc.mode != "bytes":
        raise ValueError("structure_check applies to bytes-mode documents")
    entry = doc.entry
    if entry is None:
        raise ValueError("document has no entry record")
    parser = _Parser(doc, blob)
    root = parser.parse_record(entry, "INPUT")
    if parser.remaining > 0:
        if parser.last_ref_size_field is not None:
            raise StructureMismatch(
                "SizeRefMismatch", parser.last_ref_size_field,
                f"{parser.remaining} bytes left over after the sized content "
                "it measures", parser.pos)
        raise StructureMismatch(
            "TrailingBytes", "",
            f"{parser.remaining} bytes left over after the record tree", parser.pos)
    return TestlangAst(root=root, doc_id=doc_id(doc), mode_used="checked")
