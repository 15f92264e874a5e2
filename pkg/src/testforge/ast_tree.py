"""Concrete value trees recorded alongside generated or checked blobs.

Structured seeds keep their tree because the structure of an input cannot be
reliably recovered from the bytes alone; the tree is what makes structural
mutation well-defined later.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Optional


@dataclass
class AstNode:
    path: str                 # e.g. "INPUT.lookup.table"
    kind: str                 # field kind, or "record"
    offset: int = 0           # byte span within the final blob (bytes mode)
    length: int = 0
    value: Any = None         # leaf value: int, or bytes (logical, pre-encoder)
    constraint_ok: bool = True
    children: list = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self) -> Iterator["AstNode"]:
        if self.is_leaf:
            yield self
        else:
            for child in self.children:
                yield from child.leaves()

    def find(self, path: str) -> Optional["AstNode"]:
        if self.path == path:
            return self
        for child in self.children:
            found = child.find(path)
            if found is not None:
                return found
        return None


@dataclass
class TestlangAst:
    root: AstNode
    doc_id: str
    mode_used: str = "coverage"  # "coverage" | "crash" | "checked"
    violated_fields: list = field(default_factory=list)

    def leaves(self) -> Iterator[AstNode]:
        return self.root.leaves()

    def find(self, path: str) -> Optional[AstNode]:
        return self.root.find(path)


def _node_to_json(node: AstNode) -> dict:
    out: dict[str, Any] = {
        "path": node.path,
        "kind": node.kind,
        "offset": node.offset,
        "length": node.length,
    }
    if not node.constraint_ok:
        out["constraint_ok"] = False
    if node.children:
        out["children"] = [_node_to_json(c) for c in node.children]
    elif isinstance(node.value, bytes):
        out["value"] = {"hex": node.value.hex()}
    elif node.value is not None:
        out["value"] = node.value
    return out


def _node_from_json(obj: dict) -> AstNode:
    value = obj.get("value")
    if isinstance(value, dict) and "hex" in value:
        value = bytes.fromhex(value["hex"])
    return AstNode(
        path=obj["path"],
        kind=obj["kind"],
        offset=obj.get("offset", 0),
        length=obj.get("length", 0),
        value=value,
        constraint_ok=obj.get("constraint_ok", True),
        children=[_node_from_json(c) for c in obj.get("children", [])],
    )


def ast_to_json(ast: TestlangAst) -> dict:
    return {
        "doc_id": ast.doc_id,
        "mode_used": ast.mode_used,
        "violated_fields": list(ast.violated_fields),
        "root": _node_to_json(ast.root),
    }


def ast_from_json(obj: dict) -> TestlangAst:
    return TestlangAst(
        root=_node_from_json(obj["root"]),
        doc_id=obj["doc_id"],
        mode_used=obj.get("mode_used", "coverage"),
        violated_fields=list(obj.get("violated_fields", [])),
    )
