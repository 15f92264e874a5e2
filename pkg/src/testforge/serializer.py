"""Render documents to concrete bytes or FDP producer-call sequences.

Coverage mode produces inputs satisfying every constraint; size references
are backpatched to the measured length of the content they point at.
Crash mode renders exactly one eligible field inconsistently and reports it.
Output is a deterministic function of (document, seed, mode): every field
draws from its own path-keyed random substream.
"""

from __future__ import annotations

import random
import string as string_mod
from dataclasses import dataclass
from typing import Any, Optional

from . import fdp, generators
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
    always_tail,
    doc_id,
    _int_domain,
)
from .rng import SplitRandom, as_split_random

DEFAULT_REF_LENGTH_CAP = 32
DEFAULT_COUNT_CAP = 8
OVERLONG_CAP = 1 << 16

_TEXT_ALPHABET = (string_mod.ascii_letters + string_mod.digits + " .,_-!?").encode()


class GenerationError(Exception):
    pass


class NoEligibleField(GenerationError):
    pass


class UnsupportedKindForFdp(GenerationError):
    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__(f"{path}: {reason}")


class ExternalGeneratorFailure(GenerationError):
    def __init__(self, path: str, cause: generators.GeneratorError):
        self.path = path
        self.cause = cause
        super().__init__(f"{path}: {cause}")


def encode_int(value: int, width: int, signed: bool, endianness: str) -> bytes:
    mask = (1 << width) - 1
    return (value & mask).to_bytes(width // 8, endianness)


def decode_int(raw: bytes, signed: bool, endianness: str) -> int:
    return int.from_bytes(raw, endianness, signed=signed)


def canonical_int(value: int, width: int, signed: bool) -> int:
    """The value a consumer decodes after width wrapping."""
    wrapped = value & ((1 << width) - 1)
    if signed and wrapped >= 1 << (width - 1):
        wrapped -= 1 << width
    return wrapped


# ---------------------------------------------------------------------------
# Crash targeting


@dataclass
class _CrashTarget:
    kind: str            # "value" | "size" | "length"
    path: str            # leaf path (content path for "size")
    field: Field
    size_path: str = ""  # "size" only


@dataclass
class _Violation:
    kind: str
    path: str
    value: Any = None        # replacement int/bytes for "value"
    length: Optional[int] = None  # replacement length for "length"
    size_path: str = ""
    size_choice: str = ""    # "zero" | "plus1" | "double"
    reported: str = ""       # filled in during rendering for "size"


def _violating_int(f: Field, chooser: random.Random) -> Optional[int]:
    dom_lo, dom_hi = _int_domain(f.width or 8, f.signed)
    c = f.constraint
    if isinstance(c, RangeConstraint):
        ok = lambda v: not c.lo <= v <= c.hi  # noqa: E731
        menu = [c.lo - 1, c.hi + 1, dom_lo, dom_hi, 0]
    elif isinstance(c, EnumConstraint):
        ok = lambda v: v not in c.values  # noqa: E731
        menu = [dom_lo, dom_hi, 0] + [v + 1 for v in c.values] + [v - 1 for v in c.values]
    elif isinstance(c, ConstConstraint):
        ok = lambda v: v != c.value  # noqa: E731
        menu = [c.value + 1, c.value - 1, dom_lo, dom_hi, 0]
    else:
        return None
    menu = sorted({v for v in menu if dom_lo <= v <= dom_hi and ok(v)})
    return chooser.choice(menu) if menu else None


def _violating_content(f: Field, chooser: random.Random) -> Optional[bytes]:
    c = f.constraint
    if isinstance(c, ConstConstraint):
        members = (c.value,)
    elif isinstance(c, EnumConstraint):
        members = c.values
    else:
        return None
    base = chooser.choice(members)
    if not base:
        return None
    for xor in (0xFF, 0x01, 0x80, 0x55):
        for pos in range(len(base)):
            candidate = bytes(base[:pos]) + bytes([base[pos] ^ xor]) + bytes(base[pos + 1:])
            if candidate not in members:
                return candidate
    return None


# ---------------------------------------------------------------------------
# Value sources: fresh draws for generation, replay for re-serialization


class _DrawSource:
    def __init__(self, rng: SplitRandom, violation: Optional[_Violation]):
        self.rng = rng
        self.violation = violation

    def _hit(self, path: str, kind: str) -> bool:
        return self.violation is not None and self.violation.kind == kind \
            and self.violation.path == path

    def int_value(self, f: Field, path: str) -> int:
        if self._hit(path, "value"):
            return self.violation.value
        stream = self.rng.stream(path)
        c = f.constraint
        if isinstance(c, ConstConstraint):
            return c.value
        if isinstance(c, EnumConstraint):
            return stream.choice(c.values)
        if isinstance(c, RangeConstraint):
            return stream.randint(c.lo, c.hi)
        lo, hi = _int_domain(f.width or 8, f.signed)
        return stream.randint(lo, hi)

    def content_length(self, f: Field, path: str, lo: int, hi: int) -> int:
        if self._hit(path, "length"):
            return self.violation.length  # type: ignore[return-value]
        return self.rng.stream(path + "/len").randint(lo, hi)

    def content_value(self, f: Field, path: str, length: int) -> bytes:
        if self._hit(path, "value"):
            return self.violation.value
        stream = self.rng.stream(path)
        c = f.constraint
        if isinstance(c, ConstConstraint):
            return c.value
        if isinstance(c, EnumConstraint):
            return stream.choice(c.values)
        exclude = c.sequence[0] if isinstance(c, TerminatorConstraint) else None
        if f.kind == "string":
            alphabet = bytes(b for b in _TEXT_ALPHABET if b != exclude)
        else:
            alphabet = bytes(b for b in range(256) if b != exclude)
        return bytes(stream.choice(alphabet) for _ in range(length))

    def custom_value(self, f: Field, path: str) -> bytes:
        stream = self.rng.stream(path)
        try:
            return generators.run_external_generator(f.generator, stream, path)
        except generators.GeneratorError as exc:
            raise ExternalGeneratorFailure(path, exc) from exc

    def array_count(self, f: Field, path: str, lo: int, hi: int) -> int:
        return self.rng.stream(path + "/count").randint(lo, hi)


class _AstSource:
    """Replays leaf values recorded in a value tree, with overrides."""

    def __init__(self, ast: TestlangAst, overrides: Optional[dict] = None):
        self.ast = ast
        self.overrides = overrides or {}

    def _value(self, path: str):
        if path in self.overrides:
            return self.overrides[path]
        node = self.ast.find(path)
        if node is None:
            raise GenerationError(f"value tree has no node for {path}")
        return node.value

    def int_value(self, f: Field, path: str) -> int:
        return self._value(path)

    def content_length(self, f: Field, path: str, lo: int, hi: int) -> int:
        return len(self._value(path))

    def content_value(self, f: Field, path: str, length: int) -> bytes:
        return self._value(path)

    def custom_value(self, f: Field, path: str) -> bytes:
        return self._value(path)

    def array_count(self, f: Field, path: str, lo: int, hi: int) -> int:
        node = self.ast.find(path)
        if node is None:
            raise GenerationError(f"value tree has no node for {path}")
        return len(node.children)


# ---------------------------------------------------------------------------
# Byte renderer


class _Renderer:
    def __init__(self, doc: TestlangDoc, source):
        self.doc = doc
        self.source = source
        self.out = bytearray()
        self.eligible: list[_CrashTarget] = []
        self.violated: list[str] = []

    def run(self) -> tuple[bytes, AstNode]:
        entry = self.doc.entry
        if entry is None:
            raise GenerationError("document has no entry record")
        root = self.render_record(entry, "INPUT")
        return bytes(self.out), root

    # Records keep a scope of rendered int fields so later size refs can be
    # measured against them and patched in place.

    def render_record(self, record: Record, path: str) -> AstNode:
        start = len(self.out)
        node = AstNode(path=path, kind="record", offset=start)
        referenced = {f.size.ref for f in record.fields if isinstance(f.size, RefSize)}
        referenced |= {f.count.ref for f in record.fields if isinstance(f.count, RefSize)}
        patch_sites: dict[str, tuple[int, Field, AstNode]] = {}

        for f in record.fields:
            fpath = f"{path}.{f.name}"
            if f.kind == "int":
                child = self.render_int(f, fpath, defer=f.name in referenced)
                if f.name in referenced:
                    patch_sites[f.name] = (child.offset, f, child)
            elif f.kind in ("bytes", "string"):
                child = self.render_content(f, fpath, record, patch_sites)
            elif f.kind == "custom":
                child = self.render_custom(f, fpath, record, patch_sites)
            elif f.kind == "array":
                child = self.render_array(f, fpath, record, patch_sites)
            elif f.kind == "record_ref":
                target = self.doc.record_named(f.record or "")
                if target is None:
                    raise GenerationError(f"{fpath}: unresolved record {f.record!r}")
                child = self.render_record(target, fpath)
            else:  # pragma: no cover - parser rejects unknown kinds
                raise GenerationError(f"{fpath}: cannot render kind {f.kind!r}")
            node.children.append(child)

        node.length = len(self.out) - start
        return node

    def render_int(self, f: Field, path: str, defer: bool) -> AstNode:
        start = len(self.out)
        width = f.width or 8
        if defer:
            value = 0  # patched once the referencing content is measured
        else:
            value = self.source.int_value(f, path)
        value = canonical_int(value, width, f.signed)
        self.out += encode_int(value, width, f.signed, f.endianness or "big")
        ok = _constraint_ok(f, value)
        if not ok and path not in self.violated:
            self.violated.append(path)
        if not defer and isinstance(self.source, _DrawSource) \
                and _violating_int(f, random.Random(0)) is not None:
            self.eligible.append(_CrashTarget("value", path, f))
        return AstNode(path=path, kind="int", offset=start, length=width // 8,
                       value=value, constraint_ok=ok)

    def _patch_size(self, name: str, measured: int, patch_sites: dict,
                    content_path: str) -> None:
        offset, f, node = patch_sites[name]
        width = f.width or 8
        value = measured
        violation = getattr(self.source, "violation", None)
        if violation is not None and violation.kind == "size" \
                and violation.size_path == node.path:
            value = self._violating_size(violation, measured, width, f.signed)
            violation.reported = node.path if \
                canonical_int(value, width, f.signed) < measured else content_path
            self.violated.append(violation.reported)
            node.constraint_ok = False
        value = canonical_int(value, width, f.signed)
        self.out[offset:offset + width // 8] = encode_int(
            value, width, f.signed, f.endianness or "big")
        node.value = value

    @staticmethod
    def _violating_size(violation: _Violation, measured: int, width: int,
                        signed: bool) -> int:
        menu = {"zero": 0, "plus1": measured + 1, "double": measured * 2}
        order = [violation.size_choice, "plus1", "zero"]
        for choice in order:
            v = menu[choice]
            if canonical_int(v, width, signed) != measured:
                return v
        return measured + 1  # pragma: no cover - plus1 always differs

    def _length_bounds(self, size_field: Optional[Field], cap: int) -> tuple[int, int]:
        """Drawable length domain for content measured by `size_field`."""
        if size_field is None:
            return 0, cap
        dom_lo, dom_hi = _int_domain(size_field.width or 8, size_field.signed)
        c = size_field.constraint
        if isinstance(c, ConstConstraint):
            return c.value, c.value
        if isinstance(c, EnumConstraint):
            usable = [v for v in c.values if v >= 0]
            v = min(usable) if usable else 0
            return v, v
        if isinstance(c, RangeConstraint):
            lo = max(c.lo, 0)
            return lo, min(c.hi, max(lo, cap))
        return 0, min(dom_hi, cap)

    def render_content(self, f: Field, path: str, record: Record,
                       patch_sites: dict) -> AstNode:
        start = len(self.out)
        terminated = isinstance(f.constraint, TerminatorConstraint)

        if isinstance(f.size, FixedSize):
            length = f.size.n
        elif isinstance(f.size, RefSize):
            size_field = record.field_named(f.size.ref)
            lo, hi = self._length_bounds(size_field, DEFAULT_REF_LENGTH_CAP)
            length = self.source.content_length(f, path, lo, hi)
        else:
            assert isinstance(f.size, RangeSize)
            length = self.source.content_length(f, path, f.size.lo, f.size.hi)

        content = self.source.content_value(f, path, length)
        ok = _constraint_ok(f, content)
        if not ok and path not in self.violated:
            self.violated.append(path)

        rendered = content
        if f.encoder is not None:
            rendered = generators.apply_encoder(f.encoder, content)
        if terminated:
            rendered = rendered + f.constraint.sequence  # type: ignore[union-attr]
        self.out += rendered

        if isinstance(f.size, RefSize):
            self._patch_size(f.size.ref, len(rendered), patch_sites, path)
        self._collect_content_targets(f, path, record, patch_sites)
        return AstNode(path=path, kind=f.kind, offset=start,
                       length=len(self.out) - start, value=content, constraint_ok=ok)

    def _collect_content_targets(self, f: Field, path: str, record: Record,
                                 patch_sites: dict) -> None:
        if not isinstance(self.source, _DrawSource):
            return
        if isinstance(f.constraint, (ConstConstraint, EnumConstraint)):
            if _violating_content(f, random.Random(0)) is not None:
                self.eligible.append(_CrashTarget("value", path, f))
        if isinstance(f.size, RefSize) and f.size.ref in patch_sites:
            size_field = patch_sites[f.size.ref][1]
            if (f.constraint is None and size_field.constraint is None
                    and always_tail(self.doc, record.name, f.name)):
                self.eligible.append(_CrashTarget(
                    "size", path, f, size_path=patch_sites[f.size.ref][2].path))
        if isinstance(f.size, RangeSize):
            self.eligible.append(_CrashTarget("length", path, f))

    def render_custom(self, f: Field, path: str, record: Record,
                      patch_sites: dict) -> AstNode:
        start = len(self.out)
        content = self.source.custom_value(f, path)

        if isinstance(f.size, FixedSize):
            content = content[:f.size.n].ljust(f.size.n, b"\x00")
        elif isinstance(f.size, RefSize):
            size_field = record.field_named(f.size.ref)
            lo, hi = self._length_bounds(size_field, DEFAULT_REF_LENGTH_CAP)
            content = content[:hi].ljust(lo, b"\x00")
        elif isinstance(f.size, RangeSize):
            content = content[:f.size.hi].ljust(f.size.lo, b"\x00")

        rendered = content
        if f.encoder is not None:
            rendered = generators.apply_encoder(f.encoder, content)
        self.out += rendered
        if isinstance(f.size, RefSize):
            self._patch_size(f.size.ref, len(rendered), patch_sites, path)
        return AstNode(path=path, kind="custom", offset=start,
                       length=len(self.out) - start, value=content)

    def render_array(self, f: Field, path: str, record: Record,
                     patch_sites: dict) -> AstNode:
        start = len(self.out)
        node = AstNode(path=path, kind="array", offset=start)
        elem = f.element
        assert elem is not None

        if isinstance(f.count, FixedSize):
            count = f.count.n
        elif isinstance(f.count, RefSize):
            count_field = record.field_named(f.count.ref)
            lo, hi = self._length_bounds(count_field, DEFAULT_COUNT_CAP)
            count = self.source.array_count(f, path, lo, hi)
        else:
            assert isinstance(f.count, RangeSize)
            count = self.source.array_count(f, path, f.count.lo, f.count.hi)

        for i in range(count):
            epath = f"{path}[{i}]"
            if elem.kind == "int":
                child = self.render_int(elem, epath, defer=False)
            elif elem.kind in ("bytes", "string"):
                child = self.render_content(elem, epath, record, {})
            elif elem.kind == "custom":
                child = self.render_custom(elem, epath, record, {})
            elif elem.kind == "array":
                child = self.render_array(elem, epath, record, {})
            else:
                target = self.doc.record_named(elem.record or "")
                if target is None:
                    raise GenerationError(f"{epath}: unresolved record {elem.record!r}")
                child = self.render_record(target, epath)
            node.children.append(child)

        if isinstance(f.count, RefSize):
            self._patch_size(f.count.ref, count, patch_sites, path)
        node.length = len(self.out) - start
        return node


def _constraint_ok(f: Field, value) -> bool:
    c = f.constraint
    if c is None or isinstance(c, TerminatorConstraint):
        return True
    if isinstance(c, RangeConstraint):
        return c.lo <= value <= c.hi
    if isinstance(c, EnumConstraint):
        return value in c.values
    return value == c.value


# ---------------------------------------------------------------------------
# Public operations


def generate(doc: TestlangDoc, rng: "SplitRandom | int",
             mode: str = "coverage") -> tuple[bytes, TestlangAst]:
    """Render a validated bytes-mode document to a blob plus its value tree."""
    if mode not in ("coverage", "crash"):
        raise ValueError(f"mode must be 'coverage' or 'crash', got {mode!r}")
    if doc.is_partial:
        raise GenerationError("cannot generate from a partial document")
    split = as_split_random(rng)

    renderer = _Renderer(doc, _DrawSource(split, violation=None))
    blob, root = renderer.run()
    if mode == "coverage":
        return blob, TestlangAst(root=root, doc_id=doc_id(doc), mode_used="coverage")

    chooser = split.stream("crash/choice")
    targets = list(renderer.eligible)
    while targets:
        target = targets.pop(chooser.randrange(len(targets)))
        violation = _build_violation(target, chooser)
        if violation is not None:
            break
    else:
        raise NoEligibleField("document has no field eligible for a crash-mode violation")

    crash = _Renderer(doc, _DrawSource(split, violation=violation))
    blob, root = crash.run()
    ast = TestlangAst(root=root, doc_id=doc_id(doc), mode_used="crash",
                      violated_fields=list(dict.fromkeys(crash.violated)))
    if violation.kind in ("size", "length"):
        ast.violated_fields = [violation.reported]
        node = ast.find(violation.reported)
        if node is not None:
            node.constraint_ok = False
    return blob, ast


def _build_violation(target: _CrashTarget, chooser: random.Random) -> Optional[_Violation]:
    f = target.field
    if target.kind == "value":
        if f.kind == "int":
            value = _violating_int(f, chooser)
        else:
            value = _violating_content(f, chooser)
        if value is None:
            return None
        return _Violation("value", target.path, value=value)
    if target.kind == "size":
        choice = chooser.choice(("zero", "plus1", "double"))
        return _Violation("size", target.path, size_path=target.size_path,
                          size_choice=choice)
    assert target.kind == "length"
    size = f.size
    assert isinstance(size, RangeSize)
    options = ["overlong"]
    if size.lo > 0:
        options.append("empty")
    pick = chooser.choice(options)
    if pick == "empty":
        length = 0
    else:
        length = min(max(size.hi * 8, size.hi + 1, 16), OVERLONG_CAP)
    violation = _Violation("length", target.path, length=length)
    violation.reported = target.path
    return violation


def render_from_ast(doc: TestlangDoc, ast: TestlangAst,
                    overrides: Optional[dict] = None) -> tuple[bytes, TestlangAst]:
    """Re-serialize a value tree; size refs are re-measured and backpatched."""
    renderer = _Renderer(doc, _AstSource(ast, overrides))
    blob, root = renderer.run()
    out = TestlangAst(root=root, doc_id=ast.doc_id, mode_used=ast.mode_used,
                      violated_fields=list(dict.fromkeys(renderer.violated)))
    return blob, out


def render_record_standalone(doc: TestlangDoc, record_name: str,
                             rng: "SplitRandom | int") -> bytes:
    """Render one record as a fragment, outside the entry-record context."""
    record = doc.record_named(record_name)
    if record is None:
        raise GenerationError(f"no record named {record_name!r}")
    renderer = _Renderer(doc, _DrawSource(as_split_random(rng), violation=None))
    renderer.render_record(record, record_name)
    return bytes(renderer.out)


# ---------------------------------------------------------------------------
# FDP-mode rendering: one producer call per leaf


def generate_fdp_calls(doc: TestlangDoc, rng: "SplitRandom | int",
                       mode: str = "coverage") -> tuple[list, TestlangAst]:
    """Map a fdp-mode document to a producer-call sequence plus value tree.

    Feeding the call list to fdp.encode yields the blob. Crash mode pins one
    eligible leaf at a consumer-reachable extreme (consumer-side clamping
    makes true out-of-range values unproducible through ranged calls).
    """
    if doc.mode != "fdp":
        raise GenerationError("generate_fdp_calls applies to fdp-mode documents")
    if doc.is_partial:
        raise GenerationError("cannot generate from a partial document")
    if mode not in ("coverage", "crash"):
        raise ValueError(f"mode must be 'coverage' or 'crash', got {mode!r}")
    split = as_split_random(rng)
    entry = doc.entry
    if entry is None:
        raise GenerationError("document has no entry record")

    emitter = _FdpEmitter(doc, split)
    root = emitter.walk_record(entry, "INPUT")
    ast = TestlangAst(root=root, doc_id=doc_id(doc), mode_used=mode)

    if mode == "crash":
        if not emitter.extremes:
            raise NoEligibleField("document has no int field to pin at an extreme")
        chooser = split.stream("crash/choice")
        index, path, options = chooser.choice(emitter.extremes)
        pinned = chooser.choice(options)
        call = emitter.calls[index]
        emitter.calls[index] = fdp.ProduceIntInRange(
            call.width, call.signed, call.lo, call.hi, pinned) \
            if isinstance(call, fdp.ProduceIntInRange) \
            else fdp.ProduceInt(call.width, call.signed, pinned)
        node = ast.find(path)
        if node is not None:
            node.value = pinned
        ast.violated_fields = [path]
    return emitter.calls, ast


class _FdpEmitter:
    def __init__(self, doc: TestlangDoc, rng: SplitRandom):
        self.doc = doc
        self.rng = rng
        self.calls: list = []
        self.source = _DrawSource(rng, violation=None)
        # (call index, path, extreme candidates) for crash pinning
        self.extremes: list[tuple[int, str, tuple]] = []

    def walk_record(self, record: Record, path: str) -> AstNode:
        node = AstNode(path=path, kind="record")
        for f in record.fields:
            node.children.append(self.walk_field(f, f"{path}.{f.name}", record))
        return node

    def walk_field(self, f: Field, path: str, record: Record) -> AstNode:
        if f.kind == "int":
            return self.emit_int(f, path)
        if f.kind in ("bytes", "string"):
            return self.emit_content(f, path, record)
        if f.kind == "custom":
            return self.emit_custom(f, path, record)
        if f.kind == "array":
            return self.emit_array(f, path, record)
        if f.kind == "record_ref":
            target = self.doc.record_named(f.record or "")
            if target is None:
                raise GenerationError(f"{path}: unresolved record {f.record!r}")
            return self.walk_record(target, path)
        raise UnsupportedKindForFdp(path, f"kind {f.kind!r} has no producer mapping")

    def emit_int(self, f: Field, path: str) -> AstNode:
        width, signed = f.width or 8, f.signed
        c = f.constraint
        value = self.source.int_value(f, path)
        if isinstance(c, RangeConstraint):
            self._note_extremes(path, (c.lo, c.hi))
            self.calls.append(fdp.ProduceIntInRange(width, signed, c.lo, c.hi, value))
        elif isinstance(c, EnumConstraint):
            index = self.rng.stream(path + "/idx").randrange(len(c.values))
            value = index  # the discriminant index is what the consumer reads
            self._note_extremes(path, (0, len(c.values) - 1))
            self.calls.append(
                fdp.ProduceIntInRange(width, signed, 0, len(c.values) - 1, index))
        elif isinstance(c, ConstConstraint):
            value = c.value
            self.calls.append(fdp.ProduceIntInRange(width, signed, c.value, c.value, c.value))
        else:
            dom = _int_domain(width, signed)
            self._note_extremes(path, dom)
            self.calls.append(fdp.ProduceInt(width, signed, value))
        return AstNode(path=path, kind="int", value=value)

    def _note_extremes(self, path: str, bounds: tuple) -> None:
        if bounds[0] != bounds[1]:
            self.extremes.append((len(self.calls), path, bounds))

    def emit_content(self, f: Field, path: str, record: Record) -> AstNode:
        if isinstance(f.size, RefSize):
            raise UnsupportedKindForFdp(
                path, "size refs are meaningless to an FDP consumer")
        if isinstance(f.size, FixedSize):
            length = f.size.n
        else:
            assert isinstance(f.size, RangeSize)
            length = self.source.content_length(f, path, f.size.lo, f.size.hi)
        content = self.source.content_value(f, path, length)
        tail = always_tail(self.doc, record.name, f.name)

        if f.kind == "string":
            text = content.decode("utf-8", "surrogateescape")
            self.calls.append(fdp.ProduceString(text, "remaining" if tail else "bounded"))
        else:
            data = content
            if isinstance(f.constraint, TerminatorConstraint):
                data = data + f.constraint.sequence
            if f.encoder is not None:
                data = generators.apply_encoder(f.encoder, data)
            if tail and isinstance(f.size, RangeSize):
                self.calls.append(fdp.ProduceRemainingBytes(data))
            else:
                self.calls.append(fdp.ProduceBytes(data))
        return AstNode(path=path, kind=f.kind, value=content)

    def emit_custom(self, f: Field, path: str, record: Record) -> AstNode:
        content = self.source.custom_value(f, path)
        if isinstance(f.size, FixedSize):
            content = content[:f.size.n].ljust(f.size.n, b"\x00")
        elif isinstance(f.size, RefSize):
            raise UnsupportedKindForFdp(
                path, "size refs are meaningless to an FDP consumer")
        elif isinstance(f.size, RangeSize):
            content = content[:f.size.hi].ljust(f.size.lo, b"\x00")
        data = content
        if f.encoder is not None:
            data = generators.apply_encoder(f.encoder, content)
        if f.size is None and always_tail(self.doc, record.name, f.name):
            self.calls.append(fdp.ProduceRemainingBytes(data))
        else:
            self.calls.append(fdp.ProduceBytes(data))
        return AstNode(path=path, kind="custom", value=content)

    def emit_array(self, f: Field, path: str, record: Record) -> AstNode:
        elem = f.element
        assert elem is not None
        if isinstance(f.count, RefSize):
            raise UnsupportedKindForFdp(
                path, "count refs are meaningless to an FDP consumer")
        node = AstNode(path=path, kind="array")
        if isinstance(f.count, FixedSize):
            count = f.count.n
        else:
            assert isinstance(f.count, RangeSize)
            count = self.source.array_count(f, path, f.count.lo, f.count.hi)
            # Real FDP harnesses consume the element count before the loop.
            self.calls.append(
                fdp.ProduceIntInRange(32, True, f.count.lo, f.count.hi, count))
        for i in range(count):
            node.children.append(self.walk_field(elem, f"{path}[{i}]", record))
        return node
