"""Bit-exact inverse encoders for FuzzedDataProvider-style consumers.

A consumer slices a fuzz buffer into typed values, taking primitives from the
*end* of the buffer and structured data (byte runs, strings) from the front.
The encoder here runs that process in reverse: given the values a harness
should observe, it builds a buffer that the same-dialect consumer decodes to
exactly those values.

Two dialects are supported over a shared engine: "llvm" (libFuzzer-style
C++ consumers) and "jazzer" (Java consumers). Integral, boolean, and float
decoding agree between the two; the dialects differ in their string rules,
which are isolated in one strategy object each.

Floating point follows IEEE-754 binary64 throughout. Only values that the
consumer-side decode can actually produce are encodable; checked producers
reject everything else, unchecked producers coerce to the nearest
producible value.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, replace
from typing import Sequence, Union

DIALECTS = ("llvm", "jazzer")

_U64_MAX = (1 << 64) - 1
# float(2**64 - 1) rounds up to 2**64, matching the C++ double cast of
# UINT64_MAX that upstream consumers divide by.
_PROB_DENOM = float(_U64_MAX)

# Producer-call variants, one-to-one with consumer calls.


@dataclass(frozen=True)
class ProduceBytes:
    data: bytes
    checked: bool = True


@dataclass(frozen=True)
class ProduceRemainingBytes:
    data: bytes
    checked: bool = True


@dataclass(frozen=True)
class ProduceString:
    text: str
    policy: str = "bounded"  # "bounded" (escape-terminated) | "remaining"
    checked: bool = True


@dataclass(frozen=True)
class ProduceBool:
    value: bool
    checked: bool = True


@dataclass(frozen=True)
class ProduceInt:
    width: int  # bits: 8/16/32/64
    signed: bool
    value: int
    checked: bool = True


@dataclass(frozen=True)
class ProduceIntInRange:
    width: int
    signed: bool
    lo: int
    hi: int
    value: int
    checked: bool = True


@dataclass(frozen=True)
class ProduceFloatInRange:
    lo: float
    hi: float
    value: float
    checked: bool = True


@dataclass(frozen=True)
class ProduceProbability:
    value: float
    checked: bool = True


FdpCall = Union[
    ProduceBytes, ProduceRemainingBytes, ProduceString, ProduceBool,
    ProduceInt, ProduceIntInRange, ProduceFloatInRange, ProduceProbability,
]

PRODUCE_AFTER_EXHAUSTION = "produce_after_exhaustion"
VALUE_NOT_PRODUCIBLE = "value_not_producible"
RANGE_VIOLATION = "range_violation"
NON_FINITE_FLOAT = "non_finite_float"


class FdpSemanticError(Exception):
    def __init__(self, code: str, message: str, call_index=None):
        self.code = code
        self.call_index = call_index
        super().__init__(
            f"{code}"
            + (f" at call {call_index}" if call_index is not None else "")
            + f": {message}")


def int_domain(width: int, signed: bool) -> tuple[int, int]:
    if signed:
        return -(1 << (width - 1)), (1 << (width - 1)) - 1
    return 0, (1 << width) - 1


# ---------------------------------------------------------------------------
# Per-dialect string rules


class _LlvmStrings:
    """consume-random-length-string semantics: raw bytes, backslash escapes."""

    @staticmethod
    def payload(text: str, checked: bool, index) -> bytes:
        try:
            return text.encode("utf-8", "surrogateescape")
        except UnicodeEncodeError:
            if checked:
                raise FdpSemanticError(
                    VALUE_NOT_PRODUCIBLE,
                    "string contains codepoints the consumer cannot reproduce",
                    index) from None
            return text.encode("utf-8", "replace")


class _JazzerStrings:
    """ascii-string semantics: consumer masks each byte to 7 bits."""

    @staticmethod
    def payload(text: str, checked: bool, index) -> bytes:
        if all(ord(c) <= 0x7F for c in text):
            return text.encode("ascii")
        if checked:
            raise FdpSemanticError(
                VALUE_NOT_PRODUCIBLE,
                "jazzer ascii strings cannot carry codepoints above 0x7f", index)
        return bytes(ord(c) & 0x7F for c in text)


_STRING_RULES = {"llvm": _LlvmStrings, "jazzer": _JazzerStrings}


# ---------------------------------------------------------------------------
# Encoder state


class FdpEncoder:
    """Dual-ended byte accumulator realizing the inverse encoding.

    Front bytes are consumed first-to-last; back bytes are kept in
    consumption order and emitted reversed, so the first back-producing call
    owns the very last byte of the buffer.
    """

    def __init__(self, dialect: str):
        if dialect not in DIALECTS:
            raise ValueError(f"dialect must be one of {DIALECTS}, got {dialect!r}")
        self.dialect = dialect
        self._strings = _STRING_RULES[dialect]
        self._front = bytearray()
        self._back = bytearray()  # consumption order
        self.exhausted = False
        self.calls_made = 0

    # -- plumbing -----------------------------------------------------------

    def _enter(self) -> int:
        index = self.calls_made
        if self.exhausted:
            raise FdpSemanticError(
                PRODUCE_AFTER_EXHAUSTION,
                "producer called after remaining bytes were emitted", index)
        return index

    def _done(self) -> None:
        self.calls_made += 1

    def finalize(self) -> bytes:
        return bytes(self._front) + bytes(reversed(self._back))

    # -- front producers ------------------------------------------------------

    def produce_bytes(self, data: bytes, checked: bool = True) -> None:
        self._enter()
        self._front += data
        self._done()

    def produce_remaining_bytes(self, data: bytes, checked: bool = True) -> None:
        self._enter()
        self._front += data
        self.exhausted = True
        self._done()

    def produce_string(self, text: str, policy: str = "bounded",
                       checked: bool = True) -> None:
        index = self._enter()
        if policy not in ("bounded", "remaining"):
            raise FdpSemanticError(VALUE_NOT_PRODUCIBLE,
                                   f"unknown string policy {policy!r}", index)
        payload = self._strings.payload(text, checked, index)
        if policy == "bounded":
            # Escape literal backslashes, then stop the consumer's loop with
            # a backslash + non-backslash pair.
            self._front += payload.replace(b"\x5c", b"\x5c\x5c") + b"\x5c\x00"
        else:
            self._front += payload
            self.exhausted = True
        self._done()

    # -- back producers -------------------------------------------------------

    def produce_bool(self, value: bool, checked: bool = True) -> None:
        self._enter()
        self._back += b"\x01" if value else b"\x00"
        self._done()

    def produce_int(self, width: int, signed: bool, value: int,
                    checked: bool = True) -> None:
        lo, hi = int_domain(width, signed)
        self.produce_int_in_range(width, signed, lo, hi, value, checked)

    def produce_int_in_range(self, width: int, signed: bool, lo: int, hi: int,
                             value: int, checked: bool = True) -> None:
        index = self._enter()
        dom_lo, dom_hi = int_domain(width, signed)
        if not (dom_lo <= lo <= hi <= dom_hi):
            raise FdpSemanticError(
                RANGE_VIOLATION,
                f"range [{lo}, {hi}] is not within the {width}-bit domain", index)
        if checked and not lo <= value <= hi:
            raise FdpSemanticError(
                RANGE_VIOLATION, f"value {value} outside [{lo}, {hi}]", index)
        self._back += _integral_back_bytes(width, lo, hi, value)
        self._done()

    def produce_probability(self, value: float, checked: bool = True) -> None:
        index = self._enter()
        if not math.isfinite(value):
            if checked:
                raise FdpSemanticError(NON_FINITE_FLOAT,
                                       f"value {value!r} is not finite", index)
            value = 1.0 if value == math.inf else 0.0
        elif not 0.0 <= value <= 1.0:
            if checked:
                raise FdpSemanticError(RANGE_VIOLATION,
                                       f"probability {value!r} outside [0, 1]", index)
            value = min(max(value, 0.0), 1.0)
        target = _search_u64(lambda a: float(a) / _PROB_DENOM, value)
        got = float(target) / _PROB_DENOM
        if checked and got != value:
            raise FdpSemanticError(
                VALUE_NOT_PRODUCIBLE,
                f"probability {value!r} is not producible (nearest {got!r})", index)
        self._back += target.to_bytes(8, "big")
        self._done()

    def produce_float_in_range(self, lo: float, hi: float, value: float,
                               checked: bool = True) -> None:
        index = self._enter()
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise FdpSemanticError(NON_FINITE_FLOAT,
                                   "range bounds must be finite", index)
        if lo > hi:
            raise FdpSemanticError(RANGE_VIOLATION,
                                   f"empty float range [{lo}, {hi}]", index)
        if not math.isfinite(value):
            if checked:
                raise FdpSemanticError(NON_FINITE_FLOAT,
                                       f"value {value!r} is not finite", index)
            value = hi if value == math.inf else lo
        elif not checked:
            value = min(max(value, lo), hi)

        split = hi > 0.0 and lo < 0.0 and hi > lo + sys.float_info.max
        if split:
            half = hi / 2.0 - lo / 2.0
            branches = [(False, lo, half), (True, lo + half, half)]
        else:
            branches = [(None, lo, hi - lo)]

        # Producibility, not range membership, is the criterion: consumer
        # rounding can land decoded values a hair outside [lo, hi], and such
        # values are still exactly reproducible.
        best: tuple = ()
        for flag, base, span in branches:
            target = _search_u64(lambda a: base + span * (float(a) / _PROB_DENOM), value)
            got = base + span * (float(target) / _PROB_DENOM)
            error = abs(got - value)
            if not best or error < best[0]:
                best = (error, flag, target, got)
            if got == value:
                break
        error, flag, target, got = best
        if checked and got != value:
            raise FdpSemanticError(
                VALUE_NOT_PRODUCIBLE,
                f"float {value!r} is not producible in [{lo}, {hi}] "
                f"(nearest {got!r})", index)
        if flag is not None:
            self._back += b"\x01" if flag else b"\x00"
        self._back += target.to_bytes(8, "big")
        self._done()


def _integral_back_bytes(width: int, lo: int, hi: int, value: int) -> bytes:
    """Back bytes (consumption order, most significant first) for a ranged int.

    The consumer accumulates bytes from the buffer end until the range is
    saturated, then reduces modulo the range span. Always emitting the full
    saturation length keeps every call aligned no matter what follows it.
    """
    span = hi - lo + 1
    if span == 1:
        return b""
    residue = (value - lo) % span
    nbytes = min(width // 8, ((span - 1).bit_length() + 7) // 8)
    return residue.to_bytes(nbytes, "big")


def _search_u64(decode, value: float) -> int:
    """Smallest-error preimage of a monotone u64 -> float decode."""
    lo_a, hi_a = 0, _U64_MAX
    while lo_a < hi_a:
        mid = (lo_a + hi_a) // 2
        if decode(mid) < value:
            lo_a = mid + 1
        else:
            hi_a = mid
    candidates = {lo_a}
    if lo_a > 0:
        candidates.add(lo_a - 1)
    if lo_a < _U64_MAX:
        candidates.add(lo_a + 1)
    return min(candidates, key=lambda a: (abs(decode(a) - value), a))


# ---------------------------------------------------------------------------
# Whole-call-list interface


def apply_call(encoder: FdpEncoder, call: FdpCall) -> None:
    if isinstance(call, ProduceBytes):
        encoder.produce_bytes(call.data, call.checked)
    elif isinstance(call, ProduceRemainingBytes):
        encoder.produce_remaining_bytes(call.data, call.checked)
    elif isinstance(call, ProduceString):
        encoder.produce_string(call.text, call.policy, call.checked)
    elif isinstance(call, ProduceBool):
        encoder.produce_bool(call.value, call.checked)
    elif isinstance(call, ProduceInt):
        encoder.produce_int(call.width, call.signed, call.value, call.checked)
    elif isinstance(call, ProduceIntInRange):
        encoder.produce_int_in_range(call.width, call.signed, call.lo, call.hi,
                                     call.value, call.checked)
    elif isinstance(call, ProduceFloatInRange):
        encoder.produce_float_in_range(call.lo, call.hi, call.value, call.checked)
    elif isinstance(call, ProduceProbability):
        encoder.produce_probability(call.value, call.checked)
    else:
        raise TypeError(f"not an FdpCall: {call!r}")


def encode(dialect: str, calls: Sequence[FdpCall]) -> bytes:
    """Encode a call list into a buffer; errors carry the offending index."""
    encoder = FdpEncoder(dialect)
    for call in calls:
        apply_call(encoder, call)
    return encoder.finalize()


# ---------------------------------------------------------------------------
# Wire format: JSON call-list documents (one call per entry)


def _bytes_from_wire(value) -> bytes:
    if not isinstance(value, str):
        raise ValueError(f"byte value must be a string, got {value!r}")
    if value.startswith("hex:"):
        return bytes.fromhex(value[4:])
    return value.encode("utf-8")


def _bytes_to_wire(data: bytes) -> str:
    try:
        text = data.decode("utf-8")
        if text.isprintable() and not text.startswith("hex:"):
            return text
    except UnicodeDecodeError:
        pass
    return "hex:" + data.hex()


def call_from_json(obj: dict) -> FdpCall:
    kind = obj.get("produce")
    checked = bool(obj.get("checked", True))
    if kind == "bytes":
        return ProduceBytes(_bytes_from_wire(obj["value"]), checked)
    if kind == "remaining_bytes":
        return ProduceRemainingBytes(_bytes_from_wire(obj["value"]), checked)
    if kind == "string":
        return ProduceString(str(obj["value"]), obj.get("policy", "bounded"), checked)
    if kind == "bool":
        return ProduceBool(bool(obj["value"]), checked)
    if kind == "int":
        return ProduceInt(int(obj["width"]), bool(obj.get("signed", False)),
                          int(obj["value"]), checked)
    if kind == "int_in_range":
        return ProduceIntInRange(int(obj["width"]), bool(obj.get("signed", False)),
                                 int(obj["min"]), int(obj["max"]),
                                 int(obj["value"]), checked)
    if kind == "float_in_range":
        return ProduceFloatInRange(float(obj["min"]), float(obj["max"]),
                                   float(obj["value"]), checked)
    if kind == "probability":
        return ProduceProbability(float(obj["value"]), checked)
    raise ValueError(f"unknown producer {kind!r}")


def call_to_json(call: FdpCall) -> dict:
    out: dict
    if isinstance(call, ProduceBytes):
        out = {"produce": "bytes", "value": _bytes_to_wire(call.data)}
    elif isinstance(call, ProduceRemainingBytes):
        out = {"produce": "remaining_bytes", "value": _bytes_to_wire(call.data)}
    elif isinstance(call, ProduceString):
        out = {"produce": "string", "value": call.text}
        if call.policy != "bounded":
            out["policy"] = call.policy
    elif isinstance(call, ProduceBool):
        out = {"produce": "bool", "value": call.value}
    elif isinstance(call, ProduceInt):
        out = {"produce": "int", "width": call.width, "signed": call.signed,
               "value": call.value}
    elif isinstance(call, ProduceIntInRange):
        out = {"produce": "int_in_range", "width": call.width, "signed": call.signed,
               "min": call.lo, "max": call.hi, "value": call.value}
    elif isinstance(call, ProduceFloatInRange):
        out = {"produce": "float_in_range", "min": call.lo, "max": call.hi,
               "value": call.value}
    elif isinstance(call, ProduceProbability):
        out = {"produce": "probability", "value": call.value}
    else:
        raise TypeError(f"not an FdpCall: {call!r}")
    if not call.checked:
        out["checked"] = False
    return out


def calls_from_text(text: str) -> list[FdpCall]:
    obj = json.loads(text)
    if not isinstance(obj, list):
        raise ValueError("call list document must be a JSON array")
    calls = []
    for i, entry in enumerate(obj):
        try:
            calls.append(call_from_json(entry))
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"bad call at index {i}: {exc}") from exc
    return calls


def calls_to_text(calls: Sequence[FdpCall]) -> str:
    return json.dumps([call_to_json(c) for c in calls], indent=2) + "\n"


def set_unchecked(calls: Sequence[FdpCall]) -> list[FdpCall]:
    return [replace(c, checked=False) for c in calls]
