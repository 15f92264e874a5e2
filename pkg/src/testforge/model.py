"""Testlang document model: parse, validate, normalize, and merge.

A Testlang document is UTF-8 JSON describing a binary or FDP-consumed input
format as an ordered set of records. The full grammar is documented in
docs/testlang.md, which is the authoritative schema reference for this repo.

A document parses into frozen dataclasses; all defaults (mode, endianness)
are resolved at parse time so that serialize -> parse is a fixed point.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Any, Iterator, Mapping, Optional, Union

SCHEMA_VERSION = 1
ENTRY_RECORD = "INPUT"

INT_WIDTHS = (8, 16, 32, 64)
FIELD_KINDS = ("int", "bytes", "string", "array", "record_ref", "custom")
HINTS = ("filename", "query", "url", "text")
ENDIANNESS = ("big", "little")
MODES = ("bytes", "fdp")


# ---------------------------------------------------------------------------
# Diagnostics and errors


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    code: str
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity}[{self.code}] at {self.path}: {self.message}"


class TestlangError(Exception):
    """Base class for document-level failures."""


class ParseFailure(TestlangError):
    """Raised when a document cannot be parsed into a TestlangDoc."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


class MergeError(TestlangError):
    """Raised when merging a partial document yields an invalid result."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("merge produced an invalid document: "
                         + "; ".join(str(d) for d in diagnostics))


def _err(code: str, path: str, message: str) -> Diagnostic:
    return Diagnostic("error", code, path, message)


def _warn(code: str, path: str, message: str) -> Diagnostic:
    return Diagnostic("warning", code, path, message)


# ---------------------------------------------------------------------------
# Size specs and constraints


@dataclass(frozen=True)
class FixedSize:
    n: int  # bytes (or elements, for array counts)


@dataclass(frozen=True)
class RefSize:
    ref: str
    unit: str = "bytes"  # "bytes" | "elements"


@dataclass(frozen=True)
class RangeSize:
    lo: int
    hi: int


SizeSpec = Union[FixedSize, RefSize, RangeSize]


@dataclass(frozen=True)
class RangeConstraint:
    lo: int
    hi: int


@dataclass(frozen=True)
class EnumConstraint:
    values: tuple  # ints for int fields, bytes for bytes/string fields


@dataclass(frozen=True)
class ConstConstraint:
    value: Any  # int or bytes


@dataclass(frozen=True)
class TerminatorConstraint:
    sequence: bytes


Constraint = Union[RangeConstraint, EnumConstraint, ConstConstraint, TerminatorConstraint]


@dataclass(frozen=True)
class BuiltinGenerator:
    name: str
    args: tuple  # sorted (key, value) pairs


@dataclass(frozen=True)
class ExternalGenerator:
    command: str  # shell-split command line template


GeneratorRef = Union[BuiltinGenerator, ExternalGenerator]


@dataclass(frozen=True)
class DocMetadata:
    target_lines: tuple = ()  # ((path, line), ...)
    deprioritized: bool = False


@dataclass(frozen=True)
class Field:
    name: str
    kind: str
    width: Optional[int] = None          # int only, bits
    signed: bool = False                 # int only
    endianness: Optional[str] = None     # int only; resolved at parse time
    size: Optional[SizeSpec] = None      # bytes/string/custom
    count: Optional[SizeSpec] = None     # array only
    element: Optional["Field"] = None    # array only
    record: Optional[str] = None         # record_ref only
    generator: Optional[GeneratorRef] = None  # custom only
    constraint: Optional[Constraint] = None
    hint: Optional[str] = None
    encoder: Optional[str] = None


@dataclass(frozen=True)
class Record:
    name: str
    fields: tuple = ()

    def field_named(self, name: str) -> Optional[Field]:
        for f in self.fields:
            if f.name == name:
                return f
        return None


@dataclass(frozen=True)
class TestlangDoc:
    schema_version: int = SCHEMA_VERSION
    mode: str = "bytes"
    default_endianness: str = "big"
    is_partial: bool = False
    records: tuple = ()
    metadata: DocMetadata = field(default_factory=DocMetadata)

    def record_named(self, name: str) -> Optional[Record]:
        for r in self.records:
            if r.name == name:
                return r
        return None

    @property
    def entry(self) -> Optional[Record]:
        return self.record_named(ENTRY_RECORD)


def doc_id(doc: TestlangDoc) -> str:
    """Stable short identifier derived from the normalized document text."""
    return hashlib.sha256(serialize_doc(doc).encode("utf-8")).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Byte-string literals: plain JSON strings are UTF-8; "hex:" prefixes raw hex.


def parse_byte_literal(value: str) -> bytes:
    if value.startswith("hex:"):
        return bytes.fromhex(value[4:])
    return value.encode("utf-8")


def format_byte_literal(data: bytes) -> str:
    try:
        text = data.decode("utf-8")
        if text.isprintable() and not text.startswith("hex:"):
            return text
    except UnicodeDecodeError:
        pass
    return "hex:" + data.hex()


# ---------------------------------------------------------------------------
# Parsing


class _Parser:
    def __init__(self) -> None:
        self.diagnostics: list[Diagnostic] = []

    def fail(self, code: str, path: str, message: str) -> None:
        self.diagnostics.append(_err(code, path, message))

    def parse_doc(self, obj: Any) -> TestlangDoc:
        if not isinstance(obj, dict):
            self.fail("MissingRequired", "/", "document must be a JSON object")
            return TestlangDoc()

        known = {"schema_version", "mode", "default_endianness", "is_partial",
                 "records", "metadata"}
        for key in obj:
            if key not in known:
                self.diagnostics.append(_warn("UnknownKey", f"/{key}", f"unknown key {key!r}"))

        version = obj.get("schema_version", SCHEMA_VERSION)
        if not isinstance(version, int) or version < 1:
            self.fail("MissingRequired", "/schema_version", "schema_version must be a positive integer")
            version = SCHEMA_VERSION
        elif version > SCHEMA_VERSION:
            self.fail("UnsupportedSchemaVersion", "/schema_version",
                      f"schema_version {version} is newer than supported {SCHEMA_VERSION}")

        mode = obj.get("mode", "bytes")
        if mode not in MODES:
            self.fail("MissingRequired", "/mode", f"mode must be one of {MODES}, got {mode!r}")
            mode = "bytes"

        endianness = obj.get("default_endianness", "big")
        if endianness not in ENDIANNESS:
            self.fail("MissingRequired", "/default_endianness",
                      f"default_endianness must be one of {ENDIANNESS}, got {endianness!r}")
            endianness = "big"

        is_partial = obj.get("is_partial", False)
        if not isinstance(is_partial, bool):
            self.fail("MissingRequired", "/is_partial", "is_partial must be a boolean")
            is_partial = False

        if "records" not in obj:
            self.fail("MissingRequired", "/records", "document has no records")
            raw_records = []
        else:
            raw_records = obj["records"]
            if not isinstance(raw_records, list):
                self.fail("MissingRequired", "/records", "records must be a JSON array")
                raw_records = []

        records = tuple(
            self.parse_record(r, f"/records/{i}") for i, r in enumerate(raw_records)
        )
        metadata = self.parse_metadata(obj.get("metadata"), "/metadata")

        return TestlangDoc(
            schema_version=version,
            mode=mode,
            default_endianness=endianness,
            is_partial=is_partial,
            records=records,
            metadata=metadata,
        )

    def parse_metadata(self, obj: Any, path: str) -> DocMetadata:
        if obj is None:
            return DocMetadata()
        if not isinstance(obj, dict):
            self.fail("MissingRequired", path, "metadata must be an object")
            return DocMetadata()
        lines: list[tuple] = []
        for i, item in enumerate(obj.get("target_lines", [])):
            if (isinstance(item, (list, tuple)) and len(item) == 2
                    and isinstance(item[0], str) and isinstance(item[1], int)):
                lines.append((item[0], item[1]))
            else:
                self.fail("MissingRequired", f"{path}/target_lines/{i}",
                          "target line must be [path, line]")
        deprioritized = obj.get("deprioritized", False)
        if not isinstance(deprioritized, bool):
            self.fail("MissingRequired", f"{path}/deprioritized", "deprioritized must be a boolean")
            deprioritized = False
        return DocMetadata(target_lines=tuple(lines), deprioritized=deprioritized)

    def parse_record(self, obj: Any, path: str) -> Record:
        if not isinstance(obj, dict):
            self.fail("MissingRequired", path, "record must be an object")
            return Record(name="?")
        name = obj.get("name")
        if not isinstance(name, str) or not name:
            self.fail("MissingRequired", f"{path}/name", "record needs a non-empty name")
            name = "?"
        raw_fields = obj.get("fields")
        if not isinstance(raw_fields, list):
            self.fail("MissingRequired", f"{path}/fields", "record needs a fields array")
            raw_fields = []
        fields = tuple(
            self.parse_field(f, f"{path}/fields/{i}", top_level=True)
            for i, f in enumerate(raw_fields)
        )
        return Record(name=name, fields=fields)

    def parse_field(self, obj: Any, path: str, top_level: bool) -> Field:
        if not isinstance(obj, dict):
            self.fail("MissingRequired", path, "field must be an object")
            return Field(name="?", kind="bytes", size=FixedSize(0))
        name = obj.get("name")
        if top_level and (not isinstance(name, str) or not name):
            self.fail("MissingRequired", f"{path}/name", "field needs a non-empty name")
        if not isinstance(name, str) or not name:
            name = "item"

        kind = obj.get("kind")
        if kind not in FIELD_KINDS:
            self.fail("UnknownFieldKind", f"{path}/kind",
                      f"kind must be one of {FIELD_KINDS}, got {kind!r}")
            kind = "bytes"

        width = obj.get("width")
        signed = obj.get("signed", False)
        endianness = obj.get("endianness")
        if kind == "int":
            if width not in INT_WIDTHS:
                self.fail("BadWidth", f"{path}/width",
                          f"int width must be one of {INT_WIDTHS}, got {width!r}")
                width = 8
            if not isinstance(signed, bool):
                self.fail("MissingRequired", f"{path}/signed", "signed must be a boolean")
                signed = False
            if endianness is not None and endianness not in ENDIANNESS:
                self.fail("MissingRequired", f"{path}/endianness",
                          f"endianness must be one of {ENDIANNESS}")
                endianness = None
        else:
            width = None
            signed = False
            endianness = None

        size = self.parse_size(obj.get("size"), f"{path}/size") if "size" in obj else None
        count = self.parse_size(obj.get("count"), f"{path}/count") if "count" in obj else None
        if kind == "int" and size is not None:
            self.fail("IntSizeMismatch", f"{path}/size",
                      "int fields are sized by their width; remove the size spec")
            size = None

        element = None
        if kind == "array":
            if "element" not in obj:
                self.fail("MissingRequired", f"{path}/element", "array needs an element spec")
            else:
                element = self.parse_field(obj["element"], f"{path}/element", top_level=False)
            if count is None:
                self.fail("MissingRequired", f"{path}/count", "array needs a count spec")
                count = FixedSize(0)

        record = obj.get("record")
        if kind == "record_ref" and (not isinstance(record, str) or not record):
            self.fail("MissingRequired", f"{path}/record",
                      "record_ref needs the name of the referenced record")
            record = None
        if kind != "record_ref":
            record = None

        generator = None
        if kind == "custom":
            generator = self.parse_generator(obj.get("generator"), f"{path}/generator")
        constraint = self.parse_constraint(obj.get("constraint"), f"{path}/constraint", kind)

        hint = obj.get("hint")
        if hint is not None and hint not in HINTS:
            self.fail("MissingRequired", f"{path}/hint", f"hint must be one of {HINTS}")
            hint = None

        encoder = obj.get("encoder")
        if encoder is not None and not isinstance(encoder, str):
            self.fail("UnknownEncoder", f"{path}/encoder", "encoder must be a transform name")
            encoder = None

        return Field(
            name=name, kind=kind, width=width, signed=signed, endianness=endianness,
            size=size, count=count, element=element, record=record,
            generator=generator, constraint=constraint, hint=hint, encoder=encoder,
        )

    def parse_size(self, obj: Any, path: str) -> Optional[SizeSpec]:
        if obj is None:
            return None
        if isinstance(obj, int):
            if obj < 0:
                self.fail("NegativeFixedSize", path, "fixed size must be >= 0")
                return FixedSize(0)
            return FixedSize(obj)
        if not isinstance(obj, dict):
            self.fail("MissingRequired", path, "size must be an int or an object")
            return None
        if "fixed" in obj:
            n = obj["fixed"]
            if not isinstance(n, int) or n < 0:
                self.fail("NegativeFixedSize", path, "fixed size must be an int >= 0")
                return FixedSize(0)
            return FixedSize(n)
        if "ref" in obj:
            ref = obj["ref"]
            unit = obj.get("unit", "bytes")
            if not isinstance(ref, str) or not ref:
                self.fail("MissingRequired", f"{path}/ref", "size ref needs a field name")
                return None
            if unit not in ("bytes", "elements"):
                self.fail("BadSizeUnit", f"{path}/unit", "unit must be 'bytes' or 'elements'")
                unit = "bytes"
            return RefSize(ref=ref, unit=unit)
        if "min" in obj or "max" in obj:
            lo, hi = obj.get("min", 0), obj.get("max")
            if not isinstance(lo, int) or not isinstance(hi, int) or lo < 0 or lo > hi:
                self.fail("InvalidRange", path, "size range needs 0 <= min <= max")
                return None
            return RangeSize(lo=lo, hi=hi)
        self.fail("MissingRequired", path, "size must have 'fixed', 'ref', or 'min'/'max'")
        return None

    def parse_constraint(self, obj: Any, path: str, kind: str) -> Optional[Constraint]:
        if obj is None:
            return None
        if not isinstance(obj, dict):
            self.fail("MissingRequired", path, "constraint must be an object")
            return None
        byte_valued = kind in ("bytes", "string")
        if "range" in obj:
            r = obj["range"]
            if (not isinstance(r, list) or len(r) != 2
                    or not all(isinstance(v, int) for v in r) or r[0] > r[1]):
                self.fail("InvalidRange", path, "range must be [lo, hi] with lo <= hi")
                return None
            return RangeConstraint(lo=r[0], hi=r[1])
        if "enum" in obj:
            values = obj["enum"]
            if not isinstance(values, list) or not values:
                self.fail("EmptyEnum", path, "enum needs a non-empty value list")
                return None
            parsed = []
            for i, v in enumerate(values):
                if byte_valued and isinstance(v, str):
                    parsed.append(parse_byte_literal(v))
                elif not byte_valued and isinstance(v, int):
                    parsed.append(v)
                else:
                    self.fail("ConstraintTypeMismatch", f"{path}/enum/{i}",
                              f"enum value {v!r} is not compatible with kind {kind!r}")
            return EnumConstraint(values=tuple(parsed)) if parsed else None
        if "const" in obj:
            v = obj["const"]
            if byte_valued and isinstance(v, str):
                return ConstConstraint(value=parse_byte_literal(v))
            if not byte_valued and isinstance(v, int):
                return ConstConstraint(value=v)
            self.fail("ConstraintTypeMismatch", f"{path}/const",
                      f"const value {v!r} is not compatible with kind {kind!r}")
            return None
        if "terminator" in obj:
            t = obj["terminator"]
            if not isinstance(t, str) or not parse_byte_literal(t):
                self.fail("ConstraintTypeMismatch", f"{path}/terminator",
                          "terminator must be a non-empty byte string")
                return None
            return TerminatorConstraint(sequence=parse_byte_literal(t))
        self.fail("MissingRequired", path,
                  "constraint must have 'range', 'enum', 'const', or 'terminator'")
        return None

    def parse_generator(self, obj: Any, path: str) -> Optional[GeneratorRef]:
        if obj is None:
            self.fail("MissingRequired", path, "custom field needs a generator")
            return None
        if not isinstance(obj, dict):
            self.fail("MissingRequired", path, "generator must be an object")
            return None
        if "builtin" in obj:
            name = obj["builtin"]
            args = obj.get("args", {})
            if not isinstance(name, str) or not isinstance(args, dict):
                self.fail("MissingRequired", path, "builtin generator needs a name and args object")
                return None
            return BuiltinGenerator(name=name, args=tuple(sorted(args.items())))
        if "command" in obj:
            command = obj["command"]
            if not isinstance(command, str) or not command.strip():
                self.fail("MissingRequired", f"{path}/command",
                          "external generator needs a command line")
                return None
            return ExternalGenerator(command=command)
        self.fail("MissingRequired", path, "generator must have 'builtin' or 'command'")
        return None


def parse_testlang(text: str) -> TestlangDoc:
    """Parse document text, resolving defaults; raises ParseFailure on errors."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseFailure([
            _err("SyntaxError", f"line {exc.lineno}, column {exc.colno}", exc.msg)
        ]) from exc
    parser = _Parser()
    doc = parser.parse_doc(obj)
    errors = [d for d in parser.diagnostics if d.severity == "error"]
    if errors:
        raise ParseFailure(errors)
    return _resolve_defaults(doc)


def _resolve_defaults(doc: TestlangDoc) -> TestlangDoc:
    def fix_field(f: Field) -> Field:
        changes: dict[str, Any] = {}
        if f.kind == "int" and f.endianness is None:
            changes["endianness"] = doc.default_endianness
        if f.element is not None:
            fixed = fix_field(f.element)
            if fixed is not f.element:
                changes["element"] = fixed
        return replace(f, **changes) if changes else f

    records = tuple(
        replace(r, fields=tuple(fix_field(f) for f in r.fields)) for r in doc.records
    )
    return replace(doc, records=records)


# ---------------------------------------------------------------------------
# Serialization back to document text (normal form)


def _size_to_json(spec: SizeSpec) -> Any:
    if isinstance(spec, FixedSize):
        return {"fixed": spec.n}
    if isinstance(spec, RefSize):
        out: dict[str, Any] = {"ref": spec.ref}
        if spec.unit != "bytes":
            out["unit"] = spec.unit
        return out
    return {"min": spec.lo, "max": spec.hi}


def _constraint_to_json(c: Constraint) -> Any:
    if isinstance(c, RangeConstraint):
        return {"range": [c.lo, c.hi]}
    if isinstance(c, EnumConstraint):
        return {"enum": [format_byte_literal(v) if isinstance(v, bytes) else v
                         for v in c.values]}
    if isinstance(c, ConstConstraint):
        v = c.value
        return {"const": format_byte_literal(v) if isinstance(v, bytes) else v}
    return {"terminator": format_byte_literal(c.sequence)}


def _field_to_json(f: Field) -> dict:
    out: dict[str, Any] = {"name": f.name, "kind": f.kind}
    if f.kind == "int":
        out["width"] = f.width
        if f.signed:
            out["signed"] = True
        out["endianness"] = f.endianness
    if f.size is not None:
        out["size"] = _size_to_json(f.size)
    if f.count is not None:
        out["count"] = _size_to_json(f.count)
    if f.element is not None:
        out["element"] = _field_to_json(f.element)
    if f.record is not None:
        out["record"] = f.record
    if f.generator is not None:
        if isinstance(f.generator, BuiltinGenerator):
            out["generator"] = {"builtin": f.generator.name,
                                "args": dict(f.generator.args)}
        else:
            out["generator"] = {"command": f.generator.command}
    if f.constraint is not None:
        out["constraint"] = _constraint_to_json(f.constraint)
    if f.hint is not None:
        out["hint"] = f.hint
    if f.encoder is not None:
        out["encoder"] = f.encoder
    return out


def doc_to_json(doc: TestlangDoc) -> dict:
    out: dict[str, Any] = {
        "schema_version": doc.schema_version,
        "mode": doc.mode,
        "default_endianness": doc.default_endianness,
        "is_partial": doc.is_partial,
        "records": [
            {"name": r.name, "fields": [_field_to_json(f) for f in r.fields]}
            for r in doc.records
        ],
    }
    if doc.metadata.target_lines or doc.metadata.deprioritized:
        meta: dict[str, Any] = {}
        if doc.metadata.target_lines:
            meta["target_lines"] = [list(t) for t in doc.metadata.target_lines]
        if doc.metadata.deprioritized:
            meta["deprioritized"] = True
        out["metadata"] = meta
    return out


def serialize_doc(doc: TestlangDoc) -> str:
    """Normalized document text; parse(serialize_doc(doc)) == doc."""
    return json.dumps(doc_to_json(doc), indent=2) + "\n"


# ---------------------------------------------------------------------------
# Validation


def _iter_fields(record: Record) -> Iterator[tuple[str, Field]]:
    """Yield (path-within-record, field) for all nested non-record fields."""
    for f in record.fields:
        yield f.name, f
        elem = f.element
        prefix = f.name
        while elem is not None:
            yield f"{prefix}.{elem.name}", elem
            prefix = f"{prefix}.{elem.name}"
            elem = elem.element


def _record_ref_targets(record: Record) -> tuple[set[str], Optional[str]]:
    """(targets referenced in non-tail positions, target of a trailing record_ref).

    Array elements always count as non-tail: element boundaries inside an
    array must be self-delimiting regardless of where the array sits.
    """
    non_tail: set[str] = set()
    trailing: Optional[str] = None
    for i, f in enumerate(record.fields):
        is_last = i == len(record.fields) - 1
        if f.kind == "record_ref" and f.record:
            if is_last:
                trailing = f.record
            else:
                non_tail.add(f.record)
        elem = f.element
        while elem is not None:
            if elem.kind == "record_ref" and elem.record:
                non_tail.add(elem.record)
            elem = elem.element
    return non_tail, trailing


def always_tail(doc: TestlangDoc, record_name: str, field_name: str) -> bool:
    """True when every rendered occurrence of record/field is the final leaf.

    Holds when the field is the last of its record and the record is only
    ever reached through a chain of trailing record references from the
    entry record.
    """
    entry = doc.entry
    if entry is None:
        return False
    record = doc.record_named(record_name)
    if record is None or not record.fields or record.fields[-1].name != field_name:
        return False

    # Records reachable in a non-tail context: referenced from a non-last
    # field anywhere, or referenced at all by a non-tail-context record.
    reachable = {entry.name}
    work = [entry]
    per_record = {}
    while work:
        r = work.pop()
        per_record[r.name] = _record_ref_targets(r)
        for name in per_record[r.name][0] | ({per_record[r.name][1]} - {None}):
            target = doc.record_named(name)
            if target is not None and target.name not in reachable:
                reachable.add(target.name)
                work.append(target)
    non_tail_ctx: set[str] = set()
    for name in reachable:
        non_tail_ctx |= per_record.get(name, (set(), None))[0]
    changed = True
    while changed:
        changed = False
        for name in list(non_tail_ctx & reachable):
            refs, trailing = per_record.get(name, (set(), None))
            spread = refs | ({trailing} - {None})
            if not spread <= non_tail_ctx:
                non_tail_ctx |= spread
                changed = True

    # Records reachable through the trailing chain only.
    tail_chain = {entry.name}
    cur: Optional[str] = entry.name
    while cur is not None:
        cur = per_record.get(cur, (set(), None))[1]
        if cur is None or cur in tail_chain:
            break
        tail_chain.add(cur)

    return record_name in tail_chain and record_name not in non_tail_ctx


def validate(doc: TestlangDoc) -> list[Diagnostic]:
    """Semantic checks. An empty error set means the doc is generation-ready."""
    diags: list[Diagnostic] = []
    names = [r.name for r in doc.records]
    for name in sorted({n for n in names if names.count(n) > 1}):
        diags.append(_err("DuplicateRecord", f"/records/{name}",
                          f"record {name!r} is defined more than once"))

    if not doc.is_partial and doc.entry is None:
        diags.append(_err("MissingEntryRecord", "/records",
                          f"non-partial document must define the {ENTRY_RECORD!r} record"))
    if doc.is_partial and doc.entry is not None:
        diags.append(_warn("PartialRedefinesInput", f"/records/{ENTRY_RECORD}",
                           "partial document overrides the entry record"))

    by_name: dict[str, Record] = {}
    for r in doc.records:
        by_name.setdefault(r.name, r)

    # Per-record field checks
    for r in doc.records:
        rpath = f"/records/{r.name}"
        if not r.fields:
            diags.append(_err("EmptyRecord", rpath, "record has no fields"))
        fnames = [f.name for f in r.fields]
        for name in sorted({n for n in fnames if fnames.count(n) > 1}):
            diags.append(_err("DuplicateField", f"{rpath}/{name}",
                              f"field {name!r} is defined more than once"))
        ref_targets = [spec.ref for f in r.fields
                       for spec in (f.size, f.count) if isinstance(spec, RefSize)]
        for name in sorted({n for n in ref_targets if ref_targets.count(n) > 1}):
            diags.append(_err("DuplicateSizeRef", f"{rpath}/{name}",
                              f"field {name!r} is measured by more than one ref"))
        for i, f in enumerate(r.fields):
            diags.extend(_check_field(doc, r, f, i, f"{rpath}/{f.name}", by_name))

    # Record reference graph: unresolved refs and cycles
    graph: dict[str, set[str]] = {r.name: set() for r in doc.records}
    for r in doc.records:
        for path, f in _iter_fields(r):
            if f.kind == "record_ref" and f.record:
                if f.record not in by_name:
                    if not doc.is_partial:
                        diags.append(_err("UnresolvedRecordRef", f"/records/{r.name}/{path}",
                                          f"record {f.record!r} is not defined"))
                else:
                    graph[r.name].add(f.record)
    cycle = _find_cycle(graph)
    if cycle:
        diags.append(_err("RecordCycle", f"/records/{cycle[0]}",
                          "record references form a cycle: " + " -> ".join(cycle)))

    # Unused records (reachable set from the entry record)
    if doc.entry is not None and not cycle:
        reachable = {ENTRY_RECORD}
        work = [ENTRY_RECORD]
        while work:
            for dep in sorted(graph.get(work.pop(), ())):
                if dep not in reachable:
                    reachable.add(dep)
                    work.append(dep)
        for r in doc.records:
            if r.name not in reachable:
                diags.append(_warn("UnusedRecord", f"/records/{r.name}",
                                   f"record {r.name!r} is not reachable from {ENTRY_RECORD}"))

    return diags


def _check_field(doc: TestlangDoc, record: Record, f: Field, index: int,
                 path: str, by_name: Mapping[str, Record]) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    earlier = {g.name: g for g in record.fields[:index]}

    def check_ref(spec: SizeSpec, what: str) -> None:
        if not isinstance(spec, RefSize):
            return
        target = earlier.get(spec.ref)
        if target is None:
            if record.field_named(spec.ref) is not None:
                diags.append(_err("ForwardSizeRef", f"{path}/{what}",
                                  f"{what} ref {spec.ref!r} must name an earlier field"))
            else:
                diags.append(_err("UnresolvedSizeRef", f"{path}/{what}",
                                  f"{what} ref {spec.ref!r} names no field in record {record.name!r}"))
        elif target.kind != "int":
            diags.append(_err("BadSizeRefTarget", f"{path}/{what}",
                              f"{what} ref target {spec.ref!r} must be an int field"))

    tail_rules = doc.mode == "bytes" and not doc.is_partial
    if f.kind in ("bytes", "string"):
        if f.size is None:
            diags.append(_err("MissingRequired", f"{path}/size",
                              f"{f.kind} field needs a size spec"))
        else:
            check_ref(f.size, "size")
            if isinstance(f.size, RefSize) and f.size.unit != "bytes":
                diags.append(_err("BadSizeUnit", f"{path}/size",
                                  "byte-content sizes must be measured in bytes"))
        if isinstance(f.size, RangeSize) and not isinstance(f.constraint, TerminatorConstraint):
            if tail_rules and not always_tail(doc, record.name, f.name):
                diags.append(_err(
                    "AmbiguousVariableSize", f"{path}/size",
                    "range-sized field needs a terminator constraint unless it is "
                    "the final field of the document"))
        if f.constraint is None and not doc.is_partial:
            diags.append(_warn("UnconstrainedField", path,
                               f"{f.kind} field {f.name!r} has no value constraint"))
    elif f.kind == "custom":
        if f.size is not None:
            check_ref(f.size, "size")
            if (isinstance(f.size, RangeSize) and tail_rules
                    and not always_tail(doc, record.name, f.name)):
                diags.append(_err("AmbiguousVariableSize", f"{path}/size",
                                  "range-sized custom field is only allowed in the final position"))
        elif tail_rules and not always_tail(doc, record.name, f.name):
            diags.append(_err("AmbiguousVariableSize", f"{path}/size",
                              "unsized custom field is only allowed in the final position"))
        if f.generator is None:
            diags.append(_err("MissingRequired", f"{path}/generator",
                              "custom field needs a generator"))
        elif isinstance(f.generator, BuiltinGenerator):
            from . import generators  # late import: generators uses model types
            if f.generator.name not in generators.BUILTIN_GENERATORS:
                diags.append(_err("GeneratorUnknown", f"{path}/generator",
                                  f"no builtin generator named {f.generator.name!r}"))
    elif f.kind == "array":
        if f.count is not None:
            check_ref(f.count, "count")
            if isinstance(f.count, RefSize) and f.count.unit != "elements":
                diags.append(_err("BadSizeUnit", f"{path}/count",
                                  "array counts must be measured in elements"))
            if (isinstance(f.count, RangeSize) and tail_rules
                    and not always_tail(doc, record.name, f.name)):
                diags.append(_err("AmbiguousVariableSize", f"{path}/count",
                                  "range-counted array is only allowed in the final position"))
        if f.element is not None:
            diags.extend(_check_element(doc, f.element, f"{path}/element", by_name))

    # Constraint / kind compatibility
    c = f.constraint
    if c is not None:
        if isinstance(c, RangeConstraint) and f.kind != "int":
            diags.append(_err("ConstraintTypeMismatch", f"{path}/constraint",
                              "range constraints apply to int fields only"))
        if isinstance(c, TerminatorConstraint):
            if f.kind not in ("bytes", "string"):
                diags.append(_err("ConstraintTypeMismatch", f"{path}/constraint",
                                  "terminator constraints apply to bytes/string fields"))
            elif not isinstance(f.size, RangeSize):
                diags.append(_err("ConstraintTypeMismatch", f"{path}/constraint",
                                  "terminator constraints require a range size"))
        if isinstance(c, (EnumConstraint, ConstConstraint)) and f.kind not in ("int", "bytes", "string"):
            diags.append(_err("ConstraintTypeMismatch", f"{path}/constraint",
                              "enum/const constraints apply to int/bytes/string fields"))
        if f.kind == "int" and f.width is not None:
            lo, hi = _int_domain(f.width, f.signed)
            if isinstance(c, RangeConstraint) and (c.lo < lo or c.hi > hi):
                diags.append(_err("InvalidRange", f"{path}/constraint",
                                  f"range [{c.lo}, {c.hi}] exceeds the {f.width}-bit domain"))
            if isinstance(c, EnumConstraint) and any(
                    not isinstance(v, int) or v < lo or v > hi for v in c.values):
                diags.append(_err("ConstraintTypeMismatch", f"{path}/constraint",
                                  "enum values must be ints within the field width"))
            if isinstance(c, ConstConstraint) and (
                    not isinstance(c.value, int) or c.value < lo or c.value > hi):
                diags.append(_err("ConstraintTypeMismatch", f"{path}/constraint",
                                  "const value must be an int within the field width"))
        if f.kind in ("bytes", "string"):
            if isinstance(c, ConstConstraint) and isinstance(f.size, FixedSize):
                if len(c.value) != f.size.n:
                    diags.append(_err("ConstraintTypeMismatch", f"{path}/constraint",
                                      f"const length {len(c.value)} != fixed size {f.size.n}"))
            if isinstance(c, EnumConstraint) and isinstance(f.size, FixedSize):
                if any(len(v) != f.size.n for v in c.values):
                    diags.append(_err("ConstraintTypeMismatch", f"{path}/constraint",
                                      "every enum value must match the fixed size"))
            if isinstance(c, ConstConstraint) and isinstance(f.size, RangeSize):
                if not f.size.lo <= len(c.value) <= f.size.hi:
                    diags.append(_err("ConstraintTypeMismatch", f"{path}/constraint",
                                      "const length is outside the size range"))
            if isinstance(c, EnumConstraint) and isinstance(f.size, RangeSize):
                if any(not f.size.lo <= len(v) <= f.size.hi for v in c.values):
                    diags.append(_err("ConstraintTypeMismatch", f"{path}/constraint",
                                      "enum value lengths must fit the size range"))

    if f.encoder is not None:
        from . import generators
        if f.encoder not in generators.ENCODER_TRANSFORMS:
            diags.append(_err("UnknownEncoder", f"{path}/encoder",
                              f"no encoder transform named {f.encoder!r}"))
        elif not isinstance(f.size, RefSize):
            diags.append(_err("AmbiguousVariableSize", f"{path}/encoder",
                              "transformed content has no predictable length; "
                              "encoded fields need a ref size"))
        else:
            target = record.field_named(f.size.ref)
            if target is not None and target.constraint is not None:
                diags.append(_err("ConstraintTypeMismatch", f"{path}/encoder",
                                  "the size field measuring transformed content "
                                  "must be unconstrained"))
    return diags


def _check_element(doc: TestlangDoc, elem: Field, path: str,
                   by_name: Mapping[str, Record]) -> list[Diagnostic]:
    """Array elements cannot use size refs (no sibling scope) or open sizes."""
    diags: list[Diagnostic] = []
    if elem.kind in ("bytes", "string", "custom"):
        if isinstance(elem.size, RefSize):
            diags.append(_err("UnresolvedSizeRef", f"{path}/size",
                              "array elements cannot use size refs"))
        if isinstance(elem.size, RangeSize) and not isinstance(elem.constraint, TerminatorConstraint):
            diags.append(_err("AmbiguousVariableSize", f"{path}/size",
                              "range-sized array elements need a terminator constraint"))
        if elem.kind in ("bytes", "string") and elem.size is None:
            diags.append(_err("MissingRequired", f"{path}/size",
                              f"{elem.kind} element needs a size spec"))
        if elem.kind == "custom" and elem.size is None:
            diags.append(_err("AmbiguousVariableSize", f"{path}/size",
                              "custom array elements need an explicit size"))
    if elem.kind == "array":
        if isinstance(elem.count, (RefSize, RangeSize)):
            diags.append(_err("AmbiguousVariableSize", f"{path}/count",
                              "nested arrays need a fixed count"))
        if elem.element is not None:
            diags.extend(_check_element(doc, elem.element, f"{path}/element", by_name))
    return diags


def _int_domain(width: int, signed: bool) -> tuple[int, int]:
    if signed:
        return -(1 << (width - 1)), (1 << (width - 1)) - 1
    return 0, (1 << width) - 1


def _find_cycle(graph: Mapping[str, set]) -> Optional[list[str]]:
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in graph}
    stack: list[str] = []

    def visit(node: str) -> Optional[list[str]]:
        color[node] = GRAY
        stack.append(node)
        for dep in sorted(graph.get(node, ())):
            if dep not in color:
                continue
            if color[dep] == GRAY:
                i = stack.index(dep)
                return stack[i:] + [dep]
            if color[dep] == WHITE:
                found = visit(dep)
                if found:
                    return found
        stack.pop()
        color[node] = BLACK
        return None

    for node in sorted(graph):
        if color[node] == WHITE:
            found = visit(node)
            if found:
                return found
    return None


# ---------------------------------------------------------------------------
# Partial merge


def merge_partial(base: TestlangDoc, partial: TestlangDoc) -> TestlangDoc:
    """Record-wise merge: partial records override same-named base records,
    new records are appended. The result must validate cleanly."""
    if partial.is_partial is not True:
        raise MergeError([_err("MergeProducesInvalidDoc", "/is_partial",
                               "second document is not marked partial")])
    if base.is_partial:
        raise MergeError([_err("MergeProducesInvalidDoc", "/is_partial",
                               "base document must not be partial")])
    overrides = {r.name: r for r in partial.records}
    merged = [overrides.pop(r.name, r) for r in base.records]
    for r in partial.records:
        if r.name in overrides:
            merged.append(overrides.pop(r.name))

    target_lines = list(base.metadata.target_lines)
    for t in partial.metadata.target_lines:
        if t not in target_lines:
            target_lines.append(t)
    metadata = DocMetadata(
        target_lines=tuple(target_lines),
        deprioritized=base.metadata.deprioritized or partial.metadata.deprioritized,
    )
    result = replace(base, is_partial=False, records=tuple(merged), metadata=metadata)
    errors = [d for d in validate(result) if d.severity == "error"]
    if errors:
        raise MergeError(errors)
    return result
