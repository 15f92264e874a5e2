import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # fdp_reference is test-local

from testforge import parse_testlang

DATA = Path(__file__).parent / "data"
GOLDEN = DATA / "golden"
RUNNER = Path(__file__).parent / "runners" / "stub_runner.py"


def golden_paths() -> list:
    return sorted(GOLDEN.glob("*.json"))


def load_golden(name: str):
    return parse_testlang((GOLDEN / name).read_text(encoding="utf-8"))


@pytest.fixture
def simple_lookup():
    return load_golden("01_simple_lookup.json")


@pytest.fixture
def tlv_message():
    return load_golden("02_tlv_message.json")


@pytest.fixture
def partial_update():
    return parse_testlang((DATA / "partial_update.json").read_text(encoding="utf-8"))


@pytest.fixture
def fdp_doc():
    return parse_testlang((DATA / "fdp_doc.json").read_text(encoding="utf-8"))


@pytest.fixture
def dict_path():
    return DATA / "dict.txt"


def runner_cmd(behavior: str) -> list:
    return [sys.executable, str(RUNNER), behavior]
