"""Structure-aware and dictionary-based mutation over seeds.

Seeds carrying a value tree get the full strategy set; raw byte seeds only
get tree-free strategies (fragment splicing, dictionary operators, and the
classic bit/byte flips), since structure cannot be recovered from bytes
alone. One strategy is applied per call; strategies that turn out to be
inapplicable are redrawn, and the caller only sees a failure when nothing
applies.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from .ast_tree import TestlangAst
from .model import (
    ConstConstraint,
    EnumConstraint,
    Field,
    RangeConstraint,
    Record,
    RefSize,
    TestlangDoc,
    _int_domain,
)
from .serializer import (
    _violating_content,
    _violating_int,
    canonical_int,
    encode_int,
    render_from_ast,
    render_record_standalone,
)

BOUNDARY_VALUE = "boundary_value"
TYPE_AWARE = "type_aware"
CONSTRAINT_VIOLATION = "constraint_violation"
CROSS_FIELD = "cross_field"
AST_FREE = "ast_free"
DICT_TOKEN_INSERT = "dict_token_insert"
DICT_TOKEN_REPLACE = "dict_token_replace"
DICT_BYTE_REPLACE = "dict_byte_replace"
FALLBACK_BIT_FLIP = "fallback_bit_flip"
FALLBACK_BYTE_FLIP = "fallback_byte_flip"

PRIMARY_STRATEGIES = (
    BOUNDARY_VALUE, TYPE_AWARE, CONSTRAINT_VIOLATION, CROSS_FIELD, AST_FREE,
    DICT_TOKEN_INSERT, DICT_TOKEN_REPLACE, DICT_BYTE_REPLACE,
)
FALLBACK_STRATEGIES = (FALLBACK_BIT_FLIP, FALLBACK_BYTE_FLIP)

DEFAULT_STRUCTURAL_PROB = 0.85
MAX_TOKEN_SIZE = 128
CROSS_FIELD_DELTAS = (-1, 1, 255)

TYPE_AWARE_PAYLOADS = {
    "filename": (
        b"../../../../etc/passwd",
        b"..%2f..%2f..%2fetc%2fshadow",
        b"..\\..\\..\\windows\\win.ini",
        b"/proc/self/environ",
        b"a/../" * 6 + b"flag",
    ),
    "query": (
        b"' OR 1=1 --",
        b"\" OR \"\"=\"",
        b"'; DROP TABLE seeds; --",
        b"1 UNION SELECT NULL,NULL --",
        b"admin'--",
    ),
    "url": (
        b"file:///etc/passwd",
        b"http://127.0.0.1:1/@evil.example/",
        b"javascript:alert(1)//",
        b"gopher://localhost:25/_HELO",
        b"http://[::1]/%2e%2e/",
    ),
    "text": (
        b"%s%s%s%s%n",
        b"${jndi:ldap://x/}",
        b"{{7*7}}",
        b"\x00\xff\xfe\xfd",
        b"A" * 512,
    ),
}


class MutationError(Exception):
    pass


class StrategyInapplicable(MutationError):
    pass


class DictEmpty(MutationError):
    pass


# ---------------------------------------------------------------------------
# Dictionaries


@dataclass(frozen=True)
class Dictionary:
    tokens: tuple = ()

    @classmethod
    def from_tokens(cls, tokens) -> "Dictionary":
        seen = []
        for tok in tokens:
            tok = bytes(tok)
            if tok and len(tok) <= MAX_TOKEN_SIZE and tok not in seen:
                seen.append(tok)
        return cls(tokens=tuple(seen))

    @classmethod
    def load(cls, path) -> "Dictionary":
        tokens = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                tokens.append(_unescape_token(line))
        return cls.from_tokens(tokens)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(_escape_token(tok) + "\n")

    def __len__(self) -> int:
        return len(self.tokens)

    def __bool__(self) -> bool:
        return bool(self.tokens)


def _escape_token(token: bytes) -> str:
    out = []
    for b in token:
        if 0x20 <= b <= 0x7E and b != 0x5C:
            out.append(chr(b))
        else:
            out.append(f"\\x{b:02x}")
    return "".join(out)


def _unescape_token(line: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(line):
        if line[i] == "\\" and i + 1 < len(line):
            if line[i + 1] == "\\":
                out.append(0x5C)
                i += 2
                continue
            if line[i + 1] == "x" and i + 3 < len(line) + 1:
                try:
                    out.append(int(line[i + 2:i + 4], 16))
                    i += 4
                    continue
                except ValueError:
                    pass
        out.append(ord(line[i]) & 0xFF)
        i += 1
    return bytes(out)


# ---------------------------------------------------------------------------
# Path resolution against the document


def resolve_path(doc: TestlangDoc, path: str) -> Optional[tuple[Record, Field]]:
    """Owning record and field spec for a leaf path like INPUT.a.b[0].c."""
    record = doc.entry
    f: Optional[Field] = None
    segments = path.split(".")
    if not segments or segments[0].split("[")[0] != "INPUT":
        return None
    for seg in segments[1:]:
        if record is None:
            return None
        name, _, rest = seg.partition("[")
        f = record.field_named(name)
        if f is None:
            return None
        for _ in range(rest.count("]") if rest else seg.count("[")):
            if f.element is None:
                break
            f = f.element
        if f.kind == "record_ref":
            record = doc.record_named(f.record or "")
    if f is None or record is None:
        return None
    return record, f


def _is_ref_target(record: Record, name: str) -> bool:
    for sibling in record.fields:
        for spec in (sibling.size, sibling.count):
            if isinstance(spec, RefSize) and spec.ref == name:
                return True
    return False


# ---------------------------------------------------------------------------
# Structural operators (value-tree in, value-tree out)


def boundary_value(ast: TestlangAst, doc: TestlangDoc,
                   rng: random.Random) -> tuple[bytes, TestlangAst]:
    targets = []
    for leaf in ast.leaves():
        if leaf.kind != "int":
            continue
        resolved = resolve_path(doc, leaf.path)
        if resolved is None:
            continue
        record, f = resolved
        if _is_ref_target(record, f.name):
            continue  # backpatching would overwrite the mutation
        targets.append((leaf, f))
    if not targets:
        raise StrategyInapplicable("no mutable int field in the value tree")
    leaf, f = targets[rng.randrange(len(targets))]
    width = f.width or 8
    dom_lo, dom_hi = _int_domain(width, f.signed)
    menu = {0, dom_lo, dom_hi}
    c = f.constraint
    if isinstance(c, RangeConstraint):
        menu |= {c.lo, c.hi, c.lo - 1, c.hi + 1}
    elif isinstance(c, EnumConstraint):
        menu |= {min(c.values), max(c.values), min(c.values) - 1, max(c.values) + 1}
    elif isinstance(c, ConstConstraint):
        menu |= {c.value, c.value - 1, c.value + 1}
    choices = sorted(canonical_int(v, width, f.signed) for v in menu)
    value = choices[rng.randrange(len(choices))]
    return render_from_ast(doc, ast, overrides={leaf.path: value})


def type_aware(ast: TestlangAst, doc: TestlangDoc,
               rng: random.Random) -> tuple[bytes, TestlangAst]:
    targets = []
    for leaf in ast.leaves():
        if leaf.kind not in ("bytes", "string"):
            continue
        resolved = resolve_path(doc, leaf.path)
        if resolved is None:
            continue
        _, f = resolved
        if f.hint in TYPE_AWARE_PAYLOADS:
            targets.append((leaf, f))
    if not targets:
        raise StrategyInapplicable("no semantically hinted field in the value tree")
    leaf, f = targets[rng.randrange(len(targets))]
    payloads = TYPE_AWARE_PAYLOADS[f.hint]
    payload = payloads[rng.randrange(len(payloads))]
    return render_from_ast(doc, ast, overrides={leaf.path: payload})


def constraint_violation(ast: TestlangAst, doc: TestlangDoc,
                         rng: random.Random) -> tuple[bytes, TestlangAst]:
    targets = []
    for leaf in ast.leaves():
        resolved = resolve_path(doc, leaf.path)
        if resolved is None:
            continue
        record, f = resolved
        if f.constraint is None or _is_ref_target(record, f.name):
            continue
        if f.kind == "int":
            value = _violating_int(f, rng)
        elif f.kind in ("bytes", "string"):
            value = _violating_content(f, rng)
        else:
            continue
        if value is not None:
            targets.append((leaf, value))
    if not targets:
        raise StrategyInapplicable("no violable constrained field in the value tree")
    leaf, value = targets[rng.randrange(len(targets))]
    data, new_ast = render_from_ast(doc, ast, overrides={leaf.path: value})
    if leaf.path not in new_ast.violated_fields:
        new_ast.violated_fields.append(leaf.path)
    return data, new_ast


def cross_field(ast: TestlangAst, doc: TestlangDoc,
                rng: random.Random) -> tuple[bytes, TestlangAst]:
    pairs = []
    for node in _walk_nodes(ast):
        resolved = resolve_path(doc, node.path)
        if resolved is None:
            continue
        _, f = resolved
        spec = f.size if node.kind in ("bytes", "string", "custom") else f.count
        if isinstance(spec, RefSize):
            parent = node.path.rsplit(".", 1)[0]
            pairs.append((f"{parent}.{spec.ref}", node.path))
    if not pairs:
        raise StrategyInapplicable("no size-ref pair in the value tree")
    size_path, content_path = pairs[rng.randrange(len(pairs))]
    delta = CROSS_FIELD_DELTAS[rng.randrange(len(CROSS_FIELD_DELTAS))]

    data, new_ast = render_from_ast(doc, ast)  # consistent re-render first
    size_node = new_ast.find(size_path)
    resolved = resolve_path(doc, size_path)
    if size_node is None or resolved is None:
        raise StrategyInapplicable("size field not present in the value tree")
    _, size_field = resolved
    width = size_field.width or 8
    patched = canonical_int(size_node.value + delta, width, size_field.signed)
    if patched == size_node.value:  # pragma: no cover - deltas never wrap to 0
        patched = canonical_int(size_node.value + 1, width, size_field.signed)
    raw = bytearray(data)
    raw[size_node.offset:size_node.offset + width // 8] = encode_int(
        patched, width, size_field.signed, size_field.endianness or "big")
    size_node.value = patched
    size_node.constraint_ok = False
    new_ast.violated_fields.append(size_path)
    return bytes(raw), new_ast


def _walk_nodes(ast: TestlangAst):
    stack = [ast.root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children))


# ---------------------------------------------------------------------------
# Tree-free operators (bytes in, bytes out)


def ast_free(raw: bytes, doc: TestlangDoc, rng: random.Random) -> bytes:
    record = doc.records[rng.randrange(len(doc.records))]
    fragment = render_record_standalone(doc, record.name, rng.getrandbits(63))
    if not raw:
        return fragment
    if rng.random() < 0.5:
        pos = rng.randint(0, len(raw))
        return raw[:pos] + fragment + raw[pos:]
    i = rng.randint(0, len(raw) - 1)
    j = rng.randint(i + 1, len(raw))
    return raw[:i] + fragment + raw[j:]


def dict_insert(raw: bytes, dictionary: Dictionary, rng: random.Random) -> bytes:
    if not dictionary:
        raise DictEmpty("dictionary has no tokens")
    token = dictionary.tokens[rng.randrange(len(dictionary.tokens))]
    pos = rng.randint(0, len(raw))
    return raw[:pos] + token + raw[pos:]


def dict_replace_chunk(raw: bytes, dictionary: Dictionary, rng: random.Random) -> bytes:
    if not dictionary:
        raise DictEmpty("dictionary has no tokens")
    if not raw:
        raise StrategyInapplicable("chunk replacement needs a non-empty input")
    token = dictionary.tokens[rng.randrange(len(dictionary.tokens))]
    size = rng.randint(1, len(raw))
    start = rng.randint(0, len(raw) - size)
    return raw[:start] + token + raw[start + size:]


def dict_replace_bytes(raw: bytes, dictionary: Dictionary, rng: random.Random) -> bytes:
    if not dictionary:
        raise DictEmpty("dictionary has no tokens")
    if not raw:
        raise StrategyInapplicable("byte replacement needs a non-empty input")
    token = dictionary.tokens[rng.randrange(len(dictionary.tokens))]
    k = rng.randint(1, min(8, len(token), len(raw)))
    start = rng.randint(0, len(raw) - k)
    return raw[:start] + token[:k] + raw[start + k:]


def bit_flip(raw: bytes, rng: random.Random) -> bytes:
    if not raw:
        raise StrategyInapplicable("bit flip needs a non-empty input")
    out = bytearray(raw)
    bit = rng.randrange(len(out) * 8)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


def byte_flip(raw: bytes, rng: random.Random) -> bytes:
    if not raw:
        raise StrategyInapplicable("byte flip needs a non-empty input")
    out = bytearray(raw)
    out[rng.randrange(len(out))] ^= 0xFF
    return bytes(out)


# ---------------------------------------------------------------------------
# Orchestration


@dataclass
class MutationResult:
    data: bytes
    strategy: str
    ast: Optional[TestlangAst]  # present when the mutation was structural


class Mutator:
    def __init__(self, structural_prob: float = DEFAULT_STRUCTURAL_PROB):
        self.structural_prob = structural_prob

    def applicable(self, data: bytes, ast: Optional[TestlangAst],
                   doc: Optional[TestlangDoc],
                   dictionary: Optional[Dictionary]) -> tuple[list, list]:
        primary = []
        if ast is not None and doc is not None:
            primary += [BOUNDARY_VALUE, TYPE_AWARE, CONSTRAINT_VIOLATION, CROSS_FIELD]
        if doc is not None:
            primary.append(AST_FREE)
        if dictionary:
            primary.append(DICT_TOKEN_INSERT)
            if data:
                primary += [DICT_TOKEN_REPLACE, DICT_BYTE_REPLACE]
        fallback = list(FALLBACK_STRATEGIES) if data else []
        return primary, fallback

    def mutate(self, data: bytes, rng: random.Random, *,
               ast: Optional[TestlangAst] = None,
               doc: Optional[TestlangDoc] = None,
               dictionary: Optional[Dictionary] = None) -> MutationResult:
        primary, fallback = self.applicable(data, ast, doc, dictionary)
        while primary or fallback:
            use_primary = rng.random() < self.structural_prob
            group = primary if (use_primary and primary) or not fallback else fallback
            strategy = group[rng.randrange(len(group))]
            try:
                return self._apply(strategy, data, rng, ast, doc, dictionary)
            except StrategyInapplicable:
                group.remove(strategy)
        raise StrategyInapplicable("no mutation strategy applies to this seed")

    def _apply(self, strategy: str, data: bytes, rng: random.Random,
               ast, doc, dictionary) -> MutationResult:
        if strategy == BOUNDARY_VALUE:
            out, new_ast = boundary_value(ast, doc, rng)
            return MutationResult(out, strategy, new_ast)
        if strategy == TYPE_AWARE:
            out, new_ast = type_aware(ast, doc, rng)
            return MutationResult(out, strategy, new_ast)
        if strategy == CONSTRAINT_VIOLATION:
            out, new_ast = constraint_violation(ast, doc, rng)
            return MutationResult(out, strategy, new_ast)
        if strategy == CROSS_FIELD:
            out, new_ast = cross_field(ast, doc, rng)
            return MutationResult(out, strategy, new_ast)
        if strategy == AST_FREE:
            return MutationResult(ast_free(data, doc, rng), strategy, None)
        if strategy == DICT_TOKEN_INSERT:
            return MutationResult(dict_insert(data, dictionary, rng), strategy, None)
        if strategy == DICT_TOKEN_REPLACE:
            return MutationResult(dict_replace_chunk(data, dictionary, rng), strategy, None)
        if strategy == DICT_BYTE_REPLACE:
            return MutationResult(dict_replace_bytes(data, dictionary, rng), strategy, None)
        if strategy == FALLBACK_BIT_FLIP:
            return MutationResult(bit_flip(data, rng), strategy, None)
        if strategy == FALLBACK_BYTE_FLIP:
            return MutationResult(byte_flip(data, rng), strategy, None)
        raise ValueError(f"unknown strategy {strategy!r}")
