"""Content generators for custom fields, plus named encoder transforms.

Builtin generators are desk-scale stand-ins for heavier grammar tooling.
External generators run as supervised subprocesses speaking a small
env-var protocol: TESTFORGE_SEED (decimal), TESTFORGE_MAX_BYTES (decimal),
TESTFORGE_FIELD (field path); content arrives on stdout; exit 0 is success.
"""

from __future__ import annotations

import base64
import binascii
import os
import random
import shlex
import string
import subprocess
import zlib
from dataclasses import dataclass

from .model import BuiltinGenerator, ExternalGenerator, GeneratorRef

DEFAULT_TIMEOUT = 5.0
DEFAULT_MAX_BYTES = 1 << 20


class GeneratorError(Exception):
    pass


class NonzeroExit(GeneratorError):
    def __init__(self, status: int, stderr: str = ""):
        self.status = status
        super().__init__(f"external generator exited with status {status}"
                         + (f": {stderr.strip()}" if stderr.strip() else ""))


class GeneratorTimeout(GeneratorError):
    pass


class OutputTooLarge(GeneratorError):
    pass


@dataclass(frozen=True)
class Budget:
    timeout: float = DEFAULT_TIMEOUT
    max_bytes: int = DEFAULT_MAX_BYTES


def _length_from_args(rng: random.Random, args: dict, default: int = 8) -> int:
    if "length" in args:
        return int(args["length"])
    lo = int(args.get("min", 1))
    hi = int(args.get("max", default))
    return rng.randint(lo, max(lo, hi))


def _ascii_digits(rng: random.Random, args: dict) -> bytes:
    n = _length_from_args(rng, args)
    return bytes(rng.choice(b"0123456789") for _ in range(n))


def _ascii_printable(rng: random.Random, args: dict) -> bytes:
    n = _length_from_args(rng, args, default=16)
    alphabet = string.printable[:94].encode("ascii")  # no whitespace control
    return bytes(rng.choice(alphabet) for _ in range(n))


def _utf8_text(rng: random.Random, args: dict) -> bytes:
    n = _length_from_args(rng, args, default=16)
    pieces = []
    for _ in range(n):
        roll = rng.random()
        if roll < 0.85:
            pieces.append(rng.choice(string.ascii_letters + string.digits + " .,_-"))
        elif roll < 0.95:
            pieces.append(chr(rng.randint(0xA1, 0x2FF)))
        else:
            pieces.append(chr(rng.randint(0x4E00, 0x4FFF)))
    return "".join(pieces).encode("utf-8")


def _uuid_like(rng: random.Random, args: dict) -> bytes:
    raw = rng.getrandbits(128).to_bytes(16, "big").hex()
    return f"{raw[:8]}-{raw[8:12]}-{raw[12:16]}-{raw[16:20]}-{raw[20:]}".encode("ascii")


BUILTIN_GENERATORS = {
    "ascii_digits": _ascii_digits,
    "ascii_printable": _ascii_printable,
    "utf8_text": _utf8_text,
    "uuid_like": _uuid_like,
}


def run_external_generator(ref: GeneratorRef, rng: random.Random, field_path: str = "",
                           budget: Budget = Budget()) -> bytes:
    """Produce custom-field content via a builtin or a supervised subprocess."""
    if isinstance(ref, BuiltinGenerator):
        gen = BUILTIN_GENERATORS.get(ref.name)
        if gen is None:
            raise GeneratorError(f"unknown builtin generator {ref.name!r}")
        out = gen(rng, dict(ref.args))
        if len(out) > budget.max_bytes:
            raise OutputTooLarge(f"builtin produced {len(out)} bytes, cap {budget.max_bytes}")
        return out

    assert isinstance(ref, ExternalGenerator)
    argv = shlex.split(ref.command)
    if not argv:
        raise GeneratorError("empty external generator command")
    env = dict(os.environ)
    env["TESTFORGE_SEED"] = str(rng.getrandbits(63))
    env["TESTFORGE_MAX_BYTES"] = str(budget.max_bytes)
    env["TESTFORGE_FIELD"] = field_path
    try:
        proc = subprocess.run(
            argv, env=env, capture_output=True, timeout=budget.timeout, check=False,
        )
    except subprocess.TimeoutExpired as exc:
        raise GeneratorTimeout(f"external generator exceeded {budget.timeout}s") from exc
    except OSError as exc:
        raise GeneratorError(f"cannot run {argv[0]!r}: {exc}") from exc
    if proc.returncode != 0:
        raise NonzeroExit(proc.returncode, proc.stderr.decode("utf-8", "replace"))
    if len(proc.stdout) > budget.max_bytes:
        raise OutputTooLarge(
            f"external generator produced {len(proc.stdout)} bytes, cap {budget.max_bytes}")
    return proc.stdout


# ---------------------------------------------------------------------------
# Named encoder transforms applied to field content during serialization.


class TransformError(Exception):
    pass


def _b64_decode(data: bytes) -> bytes:
    try:
        return base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise TransformError(f"invalid base64: {exc}") from exc


def _hex_decode(data: bytes) -> bytes:
    try:
        return binascii.unhexlify(data)
    except (binascii.Error, ValueError) as exc:
        raise TransformError(f"invalid hex: {exc}") from exc


def _zlib_decode(data: bytes) -> bytes:
    try:
        return zlib.decompress(data)
    except zlib.error as exc:
        raise TransformError(f"invalid zlib stream: {exc}") from exc


ENCODER_TRANSFORMS = {
    "base64": (base64.b64encode, _b64_decode),
    "hex": (binascii.hexlify, _hex_decode),
    "zlib": (lambda data: zlib.compress(data, 6), _zlib_decode),
}


def apply_encoder(name: str, content: bytes) -> bytes:
    return ENCODER_TRANSFORMS[name][0](content)


def invert_encoder(name: str, content: bytes) -> bytes:
    return ENCODER_TRANSFORMS[name][1](content)
