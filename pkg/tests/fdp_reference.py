"""Independent reference consumers for round-trip testing.

These model the published consumer-side semantics of the libFuzzer-style and
Jazzer-style FuzzedDataProvider implementations: primitives come off the end
of the buffer (last byte first, accumulated most-significant-first, reduced
modulo the range span), byte runs and strings come off the front, and
consumers never fail, degrading to defaults when the buffer runs dry.

Deliberately written against the consumer algorithms, not the encoder: this
file must stay free of any import from testforge.fdp so the round-trip tests
keep an independent oracle.
"""

from __future__ import annotations

import sys

_U64_SPAN = 1 << 64


class ReferenceConsumer:
    def __init__(self, dialect: str, data: bytes):
        assert dialect in ("llvm", "jazzer")
        self.dialect = dialect
        self.data = data
        self.begin = 0
        self.end = len(data)

    @property
    def remaining(self) -> int:
        return self.end - self.begin

    # -- end-of-buffer primitives -------------------------------------------

    def consume_int_in_range(self, width: int, signed: bool, lo: int, hi: int) -> int:
        assert lo <= hi
        range_ = hi - lo  # uint64 semantics upstream; python ints are exact
        result = 0
        offset = 0
        while offset < width and (range_ >> offset) > 0 and self.remaining:
            self.end -= 1
            result = (result << 8) | self.data[self.end]
            offset += 8
        if range_ != _U64_SPAN - 1:
            result %= range_ + 1
        return lo + result

    def consume_int(self, width: int, signed: bool) -> int:
        if signed:
            lo, hi = -(1 << (width - 1)), (1 << (width - 1)) - 1
        else:
            lo, hi = 0, (1 << width) - 1
        return self.consume_int_in_range(width, signed, lo, hi)

    def consume_bool(self) -> bool:
        return bool(self.consume_int(8, False) & 1)

    def consume_probability(self) -> float:
        raw = self.consume_int_in_range(64, False, 0, _U64_SPAN - 1)
        return float(raw) / float(_U64_SPAN - 1)

    def consume_float_in_range(self, lo: float, hi: float) -> float:
        assert lo <= hi
        result = lo
        if hi > 0 and lo < 0 and hi > lo + sys.float_info.max:
            span = hi / 2 - lo / 2
            if self.consume_bool():
                result += span
        else:
            span = hi - lo
        return result + span * self.consume_probability()

    # -- front-of-buffer structured data --------------------------------------

    def consume_bytes(self, n: int) -> bytes:
        n = min(n, self.remaining)
        chunk = self.data[self.begin:self.begin + n]
        self.begin += n
        return chunk

    def consume_remaining_bytes(self) -> bytes:
        return self.consume_bytes(self.remaining)

    def consume_string(self, max_length: int) -> str:
        out = bytearray()
        i = 0
        while i < max_length and self.remaining:
            byte = self.data[self.begin]
            self.begin += 1
            if byte == 0x5C and self.remaining:
                byte = self.data[self.begin]
                self.begin += 1
                if byte != 0x5C:
                    break
            out.append(byte)
            i += 1
        return self._text(bytes(out))

    def consume_remaining_string(self) -> str:
        return self._text(self.consume_remaining_bytes())

    def _text(self, raw: bytes) -> str:
        if self.dialect == "jazzer":
            # Java-side ascii strings: every byte is masked to 7 bits.
            return "".join(chr(b & 0x7F) for b in raw)
        return raw.decode("utf-8", "surrogateescape")


def mirror_plan(calls) -> list:
    """Derive the consume plan a harness mirroring `calls` would execute."""
    plan = []
    for call in calls:
        kind = type(call).__name__
        if kind == "ProduceBytes":
            plan.append(("bytes", len(call.data)))
        elif kind == "ProduceRemainingBytes":
            plan.append(("remaining_bytes",))
        elif kind == "ProduceString":
            if call.policy == "remaining":
                plan.append(("remaining_string",))
            else:
                # One loop iteration per produced char plus one for the stop
                # pair; the payload length is the consumer-visible char count.
                plan.append(("string", _payload_len(call.text) + 1))
        elif kind == "ProduceBool":
            plan.append(("bool",))
        elif kind == "ProduceInt":
            plan.append(("int", call.width, call.signed))
        elif kind == "ProduceIntInRange":
            plan.append(("int_in_range", call.width, call.signed, call.lo, call.hi))
        elif kind == "ProduceFloatInRange":
            plan.append(("float_in_range", call.lo, call.hi))
        elif kind == "ProduceProbability":
            plan.append(("probability",))
        else:
            raise TypeError(f"unknown call {call!r}")
    return plan


def _payload_len(text: str) -> int:
    # Oversizing max_length is safe (the stop pair ends the loop early);
    # undersizing is not, and utf-8 length bounds both dialects' payloads.
    try:
        return len(text.encode("utf-8", "surrogateescape"))
    except UnicodeEncodeError:
        return len(text.encode("utf-8", "replace"))


def run_plan(dialect: str, blob: bytes, plan) -> list:
    consumer = ReferenceConsumer(dialect, blob)
    values = []
    for step in plan:
        op = step[0]
        if op == "bytes":
            values.append(consumer.consume_bytes(step[1]))
        elif op == "remaining_bytes":
            values.append(consumer.consume_remaining_bytes())
        elif op == "string":
            values.append(consumer.consume_string(step[1]))
        elif op == "remaining_string":
            values.append(consumer.consume_remaining_string())
        elif op == "bool":
            values.append(consumer.consume_bool())
        elif op == "int":
            values.append(consumer.consume_int(step[1], step[2]))
        elif op == "int_in_range":
            values.append(consumer.consume_int_in_range(*step[1:]))
        elif op == "float_in_range":
            values.append(consumer.consume_float_in_range(step[1], step[2]))
        elif op == "probability":
            values.append(consumer.consume_probability())
        else:
            raise ValueError(f"unknown plan step {step!r}")
    return values


def decode_calls(dialect: str, blob: bytes, calls) -> list:
    """Consume `blob` exactly as a harness mirroring `calls` would."""
    return run_plan(dialect, blob, mirror_plan(calls))
