"""Local fuzz loop tying scheduler, generator, mutator, corpus, and runner.

The target runner is an external process speaking line-delimited JSON over
stdio: one request `{"input_path": "<file>"}` per execution, one response
`{"status": "ok"|"crash"|"timeout", "coverage": [["path", line], ...]}`.
This keeps the loop decoupled from any instrumentation stack.

A campaign is replayable: with a fixed master seed and a deterministic
runner, the emitted event log is byte-identical across runs.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import corpus as corpus_mod
from . import fdp, scheduler
from .model import ParseFailure, parse_testlang, validate
from .mutate import Dictionary, Mutator, StrategyInapplicable
from .rng import SplitRandom
from .serializer import NoEligibleField, generate, generate_fdp_calls

DEFAULT_EXEC_TIMEOUT = 5.0
DEFAULT_FAILURE_LIMIT = 5


class RunnerProtocolError(Exception):
    pass


class RunnerCrashLoop(Exception):
    pass


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunResult:
    status: str  # "ok" | "crash" | "timeout"
    coverage: frozenset
    wall_time: float


class RunnerClient:
    """Owns the runner subprocess and the one-line-per-execution protocol."""

    def __init__(self, command, timeout: float = DEFAULT_EXEC_TIMEOUT):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self._proc: Optional[subprocess.Popen] = None
        self._lines: queue.Queue = queue.Queue()
        self._tmpdir = tempfile.TemporaryDirectory(prefix="testforge-run-")
        self._counter = 0

    def _ensure_started(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            return
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
        )
        self._lines = queue.Queue()
        thread = threading.Thread(target=self._pump, args=(self._proc, self._lines),
                                  daemon=True)
        thread.start()

    @staticmethod
    def _pump(proc: subprocess.Popen, lines: queue.Queue) -> None:
        assert proc.stdout is not None
        for raw in proc.stdout:
            lines.put(raw)
        lines.put(None)  # EOF marker

    def _kill(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()
        self._proc = None

    def invoke(self, data: bytes) -> RunResult:
        """One execution; a hung runner is killed and counted as a timeout."""
        self._ensure_started()
        assert self._proc is not None and self._proc.stdin is not None
        self._counter += 1
        input_path = Path(self._tmpdir.name) / f"input-{self._counter}.bin"
        input_path.write_bytes(data)

        started = time.monotonic()
        request = json.dumps({"input_path": str(input_path)}) + "\n"
        try:
            self._proc.stdin.write(request.encode("utf-8"))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self._kill()
            raise RunnerProtocolError(f"runner rejected the request: {exc}") from exc

        try:
            raw = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self._kill()
            return RunResult("timeout", frozenset(), time.monotonic() - started)
        if raw is None:
            self._kill()
            raise RunnerProtocolError("runner exited without responding")

        wall = time.monotonic() - started
        try:
            obj = json.loads(raw)
            status = obj["status"]
            if status not in ("ok", "crash", "timeout"):
                raise ValueError(f"bad status {status!r}")
            coverage = frozenset((p, int(l)) for p, l in obj.get("coverage", []))
        except (ValueError, KeyError, TypeError) as exc:
            raise RunnerProtocolError(f"malformed runner response: {exc}") from exc
        return RunResult(status, coverage, wall)

    def close(self) -> None:
        if self._proc is not None and self._proc.stdin is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
        self._kill()
        self._tmpdir.cleanup()

    def __enter__(self) -> "RunnerClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# ---------------------------------------------------------------------------
# Campaign configuration and report


@dataclass
class CampaignConfig:
    runner: list
    docs: list
    iterations: int = 1000
    master_seed: int = 0
    candidates_path: Optional[str] = None
    dictionary_path: Optional[str] = None
    corpus_dir: Optional[str] = None
    p_generate: float = 0.3
    p_crash_mode: float = 0.25
    structural_prob: float = 0.85
    exec_timeout: float = DEFAULT_EXEC_TIMEOUT
    runner_failure_limit: int = DEFAULT_FAILURE_LIMIT
    stop_on_crash: bool = False
    fdp_dialect: str = "llvm"

    @classmethod
    def from_file(cls, path) -> "CampaignConfig":
        base = Path(path).parent
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(obj, dict) or "runner" not in obj or "docs" not in obj:
            raise ConfigError("config needs at least 'runner' and 'docs'")

        def resolve(p):
            p = Path(p)
            return str(p if p.is_absolute() else base / p)

        runner = obj["runner"]
        runner = shlex.split(runner) if isinstance(runner, str) else list(runner)
        kwargs = {k: obj[k] for k in (
            "iterations", "master_seed", "p_generate", "p_crash_mode",
            "structural_prob", "exec_timeout", "runner_failure_limit",
            "stop_on_crash", "fdp_dialect") if k in obj}
        return cls(
            runner=runner,
            docs=[resolve(p) for p in obj["docs"]],
            candidates_path=resolve(obj["candidates"]) if obj.get("candidates") else None,
            dictionary_path=resolve(obj["dictionary"]) if obj.get("dictionary") else None,
            corpus_dir=resolve(obj["corpus_dir"]) if obj.get("corpus_dir") else None,
            **kwargs,
        )


@dataclass
class CampaignReport:
    executions: int = 0
    adds: int = 0
    crashes: int = 0
    iterations_run: int = 0
    first_crash_iteration: Optional[int] = None
    strategy_counts: dict = field(default_factory=dict)
    action_counts: dict = field(default_factory=dict)
    corpus_stats: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    def to_json(self) -> dict:
        out = asdict(self)
        out.pop("events")
        return out


# ---------------------------------------------------------------------------
# The loop


def run_loop(config: CampaignConfig) -> CampaignReport:
    docs = []
    for path in config.docs:
        try:
            doc = parse_testlang(Path(path).read_text(encoding="utf-8"))
        except (OSError, ParseFailure) as exc:
            raise ConfigError(f"cannot load document {path}: {exc}") from exc
        errors = [d for d in validate(doc) if d.severity == "error"]
        if errors:
            raise ConfigError(f"document {path} does not validate: {errors[0]}")
        docs.append(doc)
    if not docs:
        raise ConfigError("campaign needs at least one document")

    tl_pool = scheduler.TestlangPool()
    for doc in docs:
        tl_pool.add(doc)
    docs_by_id = {entry.doc_id: entry for entry in tl_pool.entries}

    candidates = (scheduler.load_candidates(config.candidates_path)
                  if config.candidates_path else [])
    dictionary = (Dictionary.load(config.dictionary_path)
                  if config.dictionary_path else None)

    pool = corpus_mod.CorpusPool()
    if config.corpus_dir and Path(config.corpus_dir).is_dir():
        pool, _ = corpus_mod.CorpusPool.load(config.corpus_dir)

    mutator = Mutator(structural_prob=config.structural_prob)
    master = SplitRandom(config.master_seed)
    report = CampaignReport()
    consecutive_failures = 0

    with RunnerClient(config.runner, timeout=config.exec_timeout) as runner:
        for iteration in range(config.iterations):
            it = master.derive(f"iter:{iteration}")
            decide = it.stream("action")
            generate_now = decide.random() < config.p_generate or len(pool) == 0

            event: dict = {"iter": iteration}
            if generate_now:
                data, origin, ast, event_extra = _generate_input(
                    config, tl_pool, docs_by_id, it)
            else:
                data, origin, ast, event_extra = _mutate_input(
                    config, pool, candidates, docs_by_id, dictionary, mutator, it)
            event.update(event_extra)
            strategy = event["strategy"]

            try:
                result = runner.invoke(data)
                consecutive_failures = 0
            except RunnerProtocolError as exc:
                consecutive_failures += 1
                if consecutive_failures >= config.runner_failure_limit:
                    raise RunnerCrashLoop(
                        f"runner failed {consecutive_failures} times in a row: {exc}"
                    ) from exc
                event.update({"status": "runner_error", "gate": "skipped",
                              "new_coverage": 0})
                report.events.append(event)
                report.iterations_run = iteration + 1
                continue

            report.executions += 1
            crash = result.status == "crash"
            new_lines = len(result.coverage - pool.union_coverage)
            if generate_now and new_lines:
                docs_by_id[event["doc"]].lines_achieved += new_lines
            added = pool.add_seed(data, origin, result.coverage, crash=crash, ast=ast)
            if added.status == "added":
                report.adds += 1
            if crash:
                report.crashes += 1
                if report.first_crash_iteration is None:
                    report.first_crash_iteration = iteration
                scheduler.mark_triggered(candidates, result.coverage)

            report.strategy_counts[strategy] = report.strategy_counts.get(strategy, 0) + 1
            action = "generate" if generate_now else "mutate"
            report.action_counts[action] = report.action_counts.get(action, 0) + 1

            event.update({
                "input_sha": corpus_mod.seed_id_for(data)[:16],
                "status": result.status,
                "new_coverage": new_lines,
                "gate": added.status,
            })
            report.events.append(event)
            report.iterations_run = iteration + 1

            if crash and config.stop_on_crash:
                break

    report.corpus_stats = pool.stats()
    if config.corpus_dir:
        pool.persist(config.corpus_dir)
    return report


def _generate_input(config, tl_pool, docs_by_id, it: SplitRandom):
    entry = tl_pool.select(it.stream("doc-select"))
    doc = entry.doc
    mode = "crash" if it.stream("gen-mode").random() < config.p_crash_mode else "coverage"
    gen_rng = it.derive("gen")
    if doc.mode == "fdp":
        try:
            calls, ast = generate_fdp_calls(doc, gen_rng, mode)
        except NoEligibleField:
            calls, ast = generate_fdp_calls(doc, gen_rng, "coverage")
            mode = "coverage"
        data = fdp.encode(config.fdp_dialect, fdp.set_unchecked(calls))
        # FDP blobs carry no byte-span tree, so they enter the raw pool.
        origin, out_ast = corpus_mod.EXTERNAL_ORIGIN, None
    else:
        try:
            data, ast = generate(doc, gen_rng, mode)
        except NoEligibleField:
            data, ast = generate(doc, gen_rng, "coverage")
            mode = "coverage"
        origin, out_ast = corpus_mod.testlang_origin(entry.doc_id), ast
    event = {"action": "generate", "doc": entry.doc_id, "strategy": f"generate_{mode}"}
    return data, origin, out_ast, event


def _mutate_input(config, pool, candidates, docs_by_id, dictionary,
                  mutator: Mutator, it: SplitRandom):
    choice = scheduler.select_seed(pool, candidates, it.stream("seed-select"))
    seed = choice.entry
    doc = None
    ast = seed.ast
    if seed.is_structured:
        entry = docs_by_id.get(seed.origin.split(":", 1)[1])
        doc = entry.doc if entry is not None else None
    if doc is None:
        ast = None  # tree without its document is unusable for re-serialization
    try:
        result = mutator.mutate(seed.data, it.stream("mutate"), ast=ast, doc=doc,
                                dictionary=dictionary)
        data, strategy, new_ast = result.data, result.strategy, result.ast
    except StrategyInapplicable:
        data, strategy, new_ast = seed.data + b"\x00", "extend", None

    if new_ast is not None and seed.is_structured:
        origin = seed.origin
    else:
        origin, new_ast = corpus_mod.EXTERNAL_ORIGIN, None
    event = {"action": "mutate", "seed": seed.id[:16], "branch": choice.branch,
             "strategy": strategy}
    return data, origin, new_ast, event
