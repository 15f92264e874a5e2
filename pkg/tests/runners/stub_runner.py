#!/usr/bin/env python3
"""Deterministic target runners for driver tests.

Speaks the line-delimited JSON runner protocol on stdio. The behavior
argument picks the simulated target:

  echo    coverage derived from the input bytes, never crashes
  empty   always ok with no coverage
  bug     crashes when the input contains b"BUG"; byte-derived coverage
  sleep   never answers (exercises the per-exec timeout)
  garbage answers with a non-protocol line
  die     exits immediately (exercises the crash-loop guard)
"""

import json
import sys
import time


def coverage_for(data: bytes) -> list:
    return sorted({("target.c", 1 + b) for b in data[:48]})


def main() -> int:
    behavior = sys.argv[1] if len(sys.argv) > 1 else "echo"
    if behavior == "die":
        return 3
    for line in sys.stdin:
        request = json.loads(line)
        with open(request["input_path"], "rb") as fh:
            data = fh.read()
        if behavior == "sleep":
            time.sleep(3600)
        if behavior == "garbage":
            print("not json at all", flush=True)
            continue
        if behavior == "empty":
            response = {"status": "ok", "coverage": []}
        elif behavior == "bug" and b"BUG" in data:
            response = {"status": "crash",
                        "coverage": coverage_for(data) + [["target.c", 6666]]}
        else:
            response = {"status": "ok", "coverage": coverage_for(data)}
        print(json.dumps(response), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
