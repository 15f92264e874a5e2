"""Command-line interface.

Exit codes: 0 success, 1 diagnostics or runtime errors, 2 usage errors
(argparse's default).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import fdp
from .checker import StructureMismatch, structure_check
from .corpus import CorpusPool
from .driver import (
    CampaignConfig,
    ConfigError,
    RunnerCrashLoop,
    RunnerProtocolError,
    run_loop,
)
from .model import (
    MergeError,
    ParseFailure,
    merge_partial,
    parse_testlang,
    serialize_doc,
    validate,
)
from .mutate import Dictionary, Mutator, StrategyInapplicable
from .rng import SplitRandom
from .serializer import GenerationError, generate, generate_fdp_calls


def _load_doc(path: str):
    text = Path(path).read_text(encoding="utf-8")
    return parse_testlang(text)


def _print_diagnostics(diags) -> None:
    for d in diags:
        print(str(d), file=sys.stderr)


def _write_output(data: bytes, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
    else:
        Path(out).write_bytes(data)


def cmd_validate(args) -> int:
    try:
        doc = _load_doc(args.file)
    except ParseFailure as exc:
        _print_diagnostics(exc.diagnostics)
        return 1
    diags = validate(doc)
    _print_diagnostics(diags)
    errors = [d for d in diags if d.severity == "error"]
    if not errors:
        print(f"ok: {args.file} ({len(doc.records)} records, "
              f"{len([d for d in diags if d.severity == 'warning'])} warnings)")
    return 1 if errors else 0


def cmd_merge(args) -> int:
    try:
        base = _load_doc(args.base)
        partial = _load_doc(args.partial)
        merged = merge_partial(base, partial)
    except (ParseFailure, MergeError) as exc:
        _print_diagnostics(exc.diagnostics)
        return 1
    text = serialize_doc(merged)
    if args.out and args.out != "-":
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_generate(args) -> int:
    try:
        doc = _load_doc(args.doc)
    except ParseFailure as exc:
        _print_diagnostics(exc.diagnostics)
        return 1
    errors = [d for d in validate(doc) if d.severity == "error"]
    if errors:
        _print_diagnostics(errors)
        return 1

    outputs = []
    try:
        for i in range(args.count):
            rng = SplitRandom(args.seed).derive(f"cli:{i}") if args.count > 1 \
                else SplitRandom(args.seed)
            if doc.mode == "fdp":
                calls, _ = generate_fdp_calls(doc, rng, args.mode)
                outputs.append(fdp.encode(args.dialect, fdp.set_unchecked(calls)))
            else:
                blob, _ = generate(doc, rng, args.mode)
                outputs.append(blob)
    except (GenerationError, fdp.FdpSemanticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.count == 1 and not args.out_dir:
        _write_output(outputs[0], args.out)
        return 0
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, blob in enumerate(outputs):
        (out_dir / f"input-{args.seed}-{i:04d}.bin").write_bytes(blob)
    print(f"wrote {len(outputs)} inputs to {out_dir}", file=sys.stderr)
    return 0


def cmd_mutate(args) -> int:
    try:
        doc = _load_doc(args.doc)
    except ParseFailure as exc:
        _print_diagnostics(exc.diagnostics)
        return 1
    data = Path(args.infile).read_bytes()
    dictionary = Dictionary.load(args.dict) if args.dict else None

    ast = None
    try:
        ast = structure_check(doc, data)  # structured seeds get the full menu
    except (StructureMismatch, ValueError):
        pass

    rng = SplitRandom(args.seed).stream("cli-mutate")
    try:
        result = Mutator().mutate(data, rng, ast=ast, doc=doc, dictionary=dictionary)
    except StrategyInapplicable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"strategy: {result.strategy}", file=sys.stderr)
    _write_output(result.data, args.out)
    return 0


def cmd_encode(args) -> int:
    try:
        if args.calls == "-":
            text = sys.stdin.read()
        else:
            text = Path(args.calls).read_text(encoding="utf-8")
        calls = fdp.calls_from_text(text)
        blob = fdp.encode(args.dialect, calls)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except fdp.FdpSemanticError as exc:
        print(json.dumps({"error": {
            "code": exc.code,
            "call_index": exc.call_index,
            "message": str(exc),
        }}), file=sys.stderr)
        return 1
    _write_output(blob, args.out)
    return 0


def cmd_run(args) -> int:
    try:
        config = CampaignConfig.from_file(args.config)
        report = run_loop(config)
    except (ConfigError, RunnerProtocolError, RunnerCrashLoop) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            for event in report.events:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
    print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    return 0


def cmd_corpus_stats(args) -> int:
    pool, warnings = CorpusPool.load(args.directory)
    for w in warnings:
        print(f"warning[{w.code}] {w.path}: {w.message}", file=sys.stderr)
    print(json.dumps(pool.stats(), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="testforge",
        description="Structure-aware fuzzing input toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate a format document")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("merge", help="merge a partial document over a base")
    p.add_argument("base")
    p.add_argument("partial")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("generate", help="render inputs from a document")
    p.add_argument("--doc", required=True)
    p.add_argument("--mode", choices=("coverage", "crash"), default="coverage")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", default=None, help="output file for a single input")
    p.add_argument("--out-dir", default=None, help="output directory for --count > 1")
    p.add_argument("--dialect", choices=fdp.DIALECTS, default="llvm",
                   help="encoder dialect for fdp-mode documents")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("mutate", help="mutate one input under a document")
    p.add_argument("--doc", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--dict", default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_mutate)

    p = sub.add_parser("encode", help="encode an FDP producer-call list")
    p.add_argument("--dialect", choices=fdp.DIALECTS, required=True)
    p.add_argument("--calls", required=True, help="call-list JSON file, or - for stdin")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("run", help="run a fuzzing campaign from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--log", default=None, help="write the event log (JSONL)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("corpus", help="corpus utilities")
    corpus_sub = p.add_subparsers(dest="corpus_command", required=True)
    ps = corpus_sub.add_parser("stats", help="print pool statistics")
    ps.add_argument("directory")
    ps.set_defaults(func=cmd_corpus_stats)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
