"""Structure-aware fuzzing input toolkit.

Pieces: a declarative format-description language with deterministic
generation and structure-preserving mutation, inverse encoders for
FuzzedDataProvider-style consumers, a directed seed/format scheduler, and a
pluggable local fuzz loop.
"""

from .ast_tree import AstNode, TestlangAst, ast_from_json, ast_to_json
from .checker import StructureMismatch, structure_check
from .model import (
    Diagnostic,
    MergeError,
    ParseFailure,
    TestlangDoc,
    doc_id,
    merge_partial,
    parse_testlang,
    serialize_doc,
    validate,
)
from .rng import SplitRandom
from .serializer import (
    GenerationError,
    NoEligibleField,
    UnsupportedKindForFdp,
    generate,
    generate_fdp_calls,
    render_from_ast,
)

__version__ = "0.1.0"

__all__ = [
    "AstNode",
    "Diagnostic",
    "GenerationError",
    "MergeError",
    "NoEligibleField",
    "ParseFailure",
    "SplitRandom",
    "StructureMismatch",
    "TestlangAst",
    "TestlangDoc",
    "UnsupportedKindForFdp",
    "__version__",
    "ast_from_json",
    "ast_to_json",
    "doc_id",
    "generate",
    "generate_fdp_calls",
    "merge_partial",
    "parse_testlang",
    "render_from_ast",
    "serialize_doc",
    "structure_check",
    "validate",
]
