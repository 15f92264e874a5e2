#!/usr/bin/env python3
"""Run a small end-to-end campaign against the toy "BUG" target.

Generates a config on the fly, runs the loop with the bundled dictionary and
bug candidates, and prints the report plus the first few events. Useful as a
smoke check and as a template for wiring a real runner.

    python scripts/demo_campaign.py [iterations] [seed]
"""

import json
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from testforge.driver import CampaignConfig, run_loop  # noqa: E402

DATA = REPO / "tests" / "data"
RUNNER = REPO / "tests" / "runners" / "stub_runner.py"


def main() -> int:
    iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 500
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 1

    config = CampaignConfig(
        runner=[sys.executable, str(RUNNER), "bug"],
        docs=[str(DATA / "golden" / "02_tlv_message.json"),
              str(DATA / "golden" / "01_simple_lookup.json")],
        iterations=iterations,
        master_seed=seed,
        dictionary_path=str(DATA / "dict.txt"),
    )
    report = run_loop(config)

    print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    print("\nfirst events:")
    for event in report.events[:8]:
        print(" ", json.dumps(event, sort_keys=True))
    if report.first_crash_iteration is not None:
        print(f"\nfirst crash at iteration {report.first_crash_iteration}")
    else:
        print("\nno crash found")
    return 0


if __name__ == "__main__":
    sys.exit(main())
