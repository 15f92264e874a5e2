"""Mutation strategies: applicability, positional behavior, distribution."""

import json
import random

import pytest

from testforge import StructureMismatch, generate, parse_testlang, structure_check
from testforge.mutate import (
    AST_FREE,
    CROSS_FIELD,
    Dictionary,
    FALLBACK_STRATEGIES,
    MutationResult,
    Mutator,
    PRIMARY_STRATEGIES,
    StrategyInapplicable,
    TYPE_AWARE_PAYLOADS,
    ast_free,
    bit_flip,
    boundary_value,
    byte_flip,
    constraint_violation,
    cross_field,
    dict_insert,
    dict_replace_bytes,
    dict_replace_chunk,
    type_aware,
)


def parse(obj):
    return parse_testlang(json.dumps(obj))


class ScriptedRng:
    """Duck-typed rng whose scripted draws drive positional assertions."""

    def __init__(self, script):
        self.script = list(script)
        self._fallback = random.Random(0)

    def _next(self, fallback):
        return self.script.pop(0) if self.script else fallback

    def randint(self, a, b):
        return min(max(self._next(a), a), b)

    def randrange(self, *args):
        lo, hi = (0, args[0]) if len(args) == 1 else (args[0], args[1])
        return min(max(self._next(lo), lo), hi - 1)

    def random(self):
        return self._next(0.0)

    def getrandbits(self, k):
        return self._fallback.getrandbits(k)


@pytest.fixture
def rich_doc():
    return parse({"records": [{"name": "INPUT", "fields": [
        {"name": "kind", "kind": "int", "width": 8, "constraint": {"enum": [1, 2, 3]}},
        {"name": "level", "kind": "int", "width": 16, "constraint": {"range": [10, 100]}},
        {"name": "name_len", "kind": "int", "width": 8},
        {"name": "name", "kind": "string", "size": {"ref": "name_len"},
         "hint": "filename"},
        {"name": "blob_len", "kind": "int", "width": 16},
        {"name": "blob", "kind": "bytes", "size": {"ref": "blob_len"}},
    ]}]})


@pytest.fixture
def rich_seed(rich_doc):
    return generate(rich_doc, 77)


class TestBoundaryValue:
    def test_value_lands_in_menu(self, rich_doc, rich_seed):
        blob, ast = rich_seed
        menu_level = {10, 100, 9, 101, 0, 65535}
        menu_kind = {1, 3, 0, 2, 4, 255}
        seen = set()
        for i in range(200):
            data, new_ast = boundary_value(ast, rich_doc, random.Random(i))
            changed = [
                (a.path, b.value) for a, b in zip(ast.leaves(), new_ast.leaves())
                if a.kind == "int" and a.value != b.value
            ]
            for path, value in changed:
                seen.add(path)
                if path == "INPUT.level":
                    assert value in menu_level
                if path == "INPUT.kind":
                    assert value in menu_kind
        assert "INPUT.level" in seen and "INPUT.kind" in seen

    def test_unconstrained_u8_hits_width_extremes(self):
        doc = parse({"records": [{"name": "INPUT", "fields": [
            {"name": "v", "kind": "int", "width": 8},
        ]}]})
        blob, ast = generate(doc, 1)
        values = {boundary_value(ast, doc, random.Random(i))[1]
                  .find("INPUT.v").value for i in range(100)}
        assert {0, 255} <= values

    def test_signed_width_minimum_producible(self):
        doc = parse({"records": [{"name": "INPUT", "fields": [
            {"name": "v", "kind": "int", "width": 32, "signed": True},
        ]}]})
        blob, ast = generate(doc, 1)
        reached = set()
        for i in range(100):
            data, new_ast = boundary_value(ast, doc, random.Random(i))
            value = new_ast.find("INPUT.v").value
            reached.add(value)
            assert structure_check(doc, data).find("INPUT.v").value == value
        assert -(2**31) in reached

    def test_needs_an_int_field(self):
        doc = parse({"records": [{"name": "INPUT", "fields": [
            {"name": "b", "kind": "bytes", "size": 4},
        ]}]})
        blob, ast = generate(doc, 1)
        with pytest.raises(StrategyInapplicable):
            boundary_value(ast, doc, random.Random(0))


class TestTypeAware:
    def test_filename_payloads_stay_parseable(self, rich_doc, rich_seed):
        _, ast = rich_seed
        saw_traversal = False
        for i in range(50):
            data, new_ast = type_aware(ast, rich_doc, random.Random(i))
            payload = new_ast.find("INPUT.name").value
            assert payload in TYPE_AWARE_PAYLOADS["filename"]
            saw_traversal |= b"../" in payload
            structure_check(rich_doc, data)  # ref size was re-backpatched
        assert saw_traversal

    def test_query_payloads_include_quote_imbalance(self):
        assert any(p.count(b"'") % 2 == 1 for p in TYPE_AWARE_PAYLOADS["query"])

    def test_no_hints_is_inapplicable(self, simple_lookup):
        blob, ast = generate(simple_lookup, 1)
        with pytest.raises(StrategyInapplicable):
            type_aware(ast, simple_lookup, random.Random(0))


class TestConstraintViolation:
    def test_checker_flags_exactly_the_target(self, rich_doc, rich_seed):
        _, ast = rich_seed
        for i in range(60):
            data, new_ast = constraint_violation(ast, rich_doc, random.Random(i))
            [target] = new_ast.violated_fields
            with pytest.raises(StructureMismatch) as exc:
                structure_check(rich_doc, data)
            assert exc.value.code == "ConstraintViolated"
            assert exc.value.field == target

    def test_enum_and_const_and_range_menus(self, simple_lookup):
        blob, ast = generate(simple_lookup, 5)
        data, new_ast = constraint_violation(ast, simple_lookup, random.Random(1))
        assert new_ast.violated_fields == ["INPUT.magic"]
        assert new_ast.find("INPUT.magic").value != b"LKUP"


class TestCrossField:
    def test_size_no_longer_matches_and_checker_fails_at_or_after_pair(
            self, rich_doc, rich_seed):
        _, ast = rich_seed
        order = [leaf.path for leaf in ast.leaves()]
        deltas = set()
        for i in range(300):
            data, new_ast = cross_field(ast, rich_doc, random.Random(i))
            [size_path] = new_ast.violated_fields
            size_node = new_ast.find(size_path)
            old = ast.find(size_path)
            width = size_node.length * 8
            deltas.add((size_node.value - old.value) % (1 << width))
            with pytest.raises(StructureMismatch) as exc:
                structure_check(rich_doc, data)
            # Everything before the broken pair still parses; a positive
            # delta steals bytes, so the flagged field may sit downstream.
            if exc.value.field:
                assert order.index(exc.value.field) >= order.index(size_path)
        assert deltas == {(1 << 16) - 1, 1, 255}

    def test_undersized_delta_reports_size_ref_mismatch(self, rich_doc):
        # Force delta -1 on a tail pair: SizeRefMismatch on the size field.
        doc = parse({"records": [{"name": "INPUT", "fields": [
            {"name": "n", "kind": "int", "width": 8},
            {"name": "body", "kind": "bytes", "size": {"ref": "n"}},
        ]}]})
        blob, ast = generate(doc, 9)
        if ast.find("INPUT.body").length == 0:
            blob, ast = generate(doc, 10)
        rng = ScriptedRng([0, 0])  # pick first pair, delta index 0 = -1
        data, new_ast = cross_field(ast, doc, rng)
        with pytest.raises(StructureMismatch) as exc:
            structure_check(doc, data)
        assert exc.value.code == "SizeRefMismatch"
        assert exc.value.field == "INPUT.n"

    def test_no_refs_is_inapplicable(self):
        doc = parse({"records": [{"name": "INPUT", "fields": [
            {"name": "x", "kind": "int", "width": 8},
        ]}]})
        blob, ast = generate(doc, 1)
        with pytest.raises(StrategyInapplicable):
            cross_field(ast, doc, random.Random(0))


class TestAstFree:
    def test_empty_input_becomes_a_fragment(self, simple_lookup):
        out = ast_free(b"", simple_lookup, random.Random(3))
        assert out

    def test_insertion_length_arithmetic(self, simple_lookup):
        raw = b"0123456789"
        rng = ScriptedRng([0, 0.0, 3])  # record 0, insert mode, position 3
        out = ast_free(raw, simple_lookup, rng)
        assert len(out) > len(raw)
        assert out[:3] == raw[:3]
        assert out.endswith(raw[3:])

    def test_splice_overwrites_the_span(self, simple_lookup):
        raw = bytes(range(16))
        rng = ScriptedRng([0, 0.9, 4, 9])  # record 0, splice mode, span [4, 9)
        out = ast_free(raw, simple_lookup, rng)
        assert out[:4] == raw[:4]
        assert out.endswith(raw[9:])
        fragment = out[4:len(out) - len(raw[9:])]
        assert len(fragment) > 0


class TestDictionaryOps:
    def test_insert_at_position(self):
        d = Dictionary.from_tokens([b"Host"])
        rng = ScriptedRng([0, 1])  # token 0, position 1
        assert dict_insert(b"xy", d, rng) == b"xHosty"

    def test_replace_chunk_whole_input(self):
        d = Dictionary.from_tokens([b"TOKEN"])
        rng = ScriptedRng([0, 99, 0])  # token, size clamped to len, start 0
        assert dict_replace_chunk(b"abc", d, rng) == b"TOKEN"

    def test_replace_bytes_keeps_length(self):
        d = Dictionary.from_tokens([b"LONGTOKEN"])
        raw = b"0123456789"
        for i in range(50):
            out = dict_replace_bytes(raw, d, random.Random(i))
            assert len(out) == len(raw)

    def test_token_is_contiguous_in_output(self):
        d = Dictionary.from_tokens([b"NEEDLE"])
        raw = bytes(range(32))
        for i in range(50):
            assert b"NEEDLE" in dict_insert(raw, d, random.Random(i))
            assert b"NEEDLE" in dict_replace_chunk(raw, d, random.Random(i))

    def test_dictionary_file_roundtrip(self, tmp_path, dict_path):
        d = Dictionary.load(dict_path)
        assert b"BUG" in d.tokens
        assert b"\x00\x01\x02\x03" in d.tokens
        out = tmp_path / "dict.txt"
        d.save(out)
        assert Dictionary.load(out).tokens == d.tokens

    def test_dedup_and_size_cap(self):
        d = Dictionary.from_tokens([b"a", b"a", b"", b"b" * 1000])
        assert d.tokens == (b"a",)


class TestFallbacks:
    def test_bit_flip_changes_exactly_one_bit(self):
        raw = bytes(16)
        for i in range(20):
            out = bit_flip(raw, random.Random(i))
            diff = [a ^ b for a, b in zip(raw, out)]
            assert sum(bin(d).count("1") for d in diff) == 1

    def test_single_byte_input_cannot_be_a_fixed_point(self):
        for i in range(10):
            assert bit_flip(b"\x42", random.Random(i)) != b"\x42"

    def test_byte_flip_inverts_one_byte(self):
        out = byte_flip(b"\x00\x00", random.Random(1))
        assert sorted(out) in ([0, 255], [255, 255]) or out.count(255) == 1


class TestOrchestration:
    def test_draw_distribution(self, rich_doc, rich_seed):
        """Primary strategies get 0.85 of draws, fallbacks 0.15, within 2%."""
        blob, ast = rich_seed
        d = Dictionary.from_tokens([b"BUG", b"token"])
        mutator = Mutator()
        counts = {"primary": 0, "fallback": 0}
        draws = 10_000
        rng = random.Random(2024)
        for _ in range(draws):
            result = mutator.mutate(blob, rng, ast=ast, doc=rich_doc, dictionary=d)
            group = "fallback" if result.strategy in FALLBACK_STRATEGIES else "primary"
            counts[group] += 1
        assert abs(counts["primary"] / draws - 0.85) < 0.02
        assert abs(counts["fallback"] / draws - 0.15) < 0.02

    def test_raw_seed_only_gets_tree_free_strategies(self, rich_doc):
        mutator = Mutator()
        d = Dictionary.from_tokens([b"t"])
        allowed = {AST_FREE, "dict_token_insert", "dict_token_replace",
                   "dict_byte_replace"} | set(FALLBACK_STRATEGIES)
        rng = random.Random(5)
        for _ in range(300):
            result = mutator.mutate(b"rawbytes", rng, ast=None, doc=rich_doc,
                                    dictionary=d)
            assert result.strategy in allowed
            assert result.ast is None

    def test_empty_dictionary_never_draws_dict_strategies(self, rich_doc, rich_seed):
        blob, ast = rich_seed
        mutator = Mutator()
        rng = random.Random(6)
        for _ in range(300):
            result = mutator.mutate(blob, rng, ast=ast, doc=rich_doc, dictionary=None)
            assert not result.strategy.startswith("dict_")

    def test_nothing_applicable_raises(self):
        with pytest.raises(StrategyInapplicable):
            Mutator().mutate(b"", random.Random(0))

    def test_deterministic_replay(self, rich_doc, rich_seed):
        blob, ast = rich_seed
        d = Dictionary.from_tokens([b"BUG"])
        a = Mutator().mutate(blob, random.Random(42), ast=ast, doc=rich_doc, dictionary=d)
        b = Mutator().mutate(blob, random.Random(42), ast=ast, doc=rich_doc, dictionary=d)
        assert (a.data, a.strategy) == (b.data, b.strategy)

    def test_structural_results_carry_a_tree(self, rich_doc, rich_seed):
        blob, ast = rich_seed
        structural = {"boundary_value", "type_aware", "constraint_violation",
                      "cross_field"}
        seen = set()
        rng = random.Random(7)
        for _ in range(500):
            result = Mutator().mutate(blob, rng, ast=ast, doc=rich_doc)
            if result.strategy in structural:
                assert result.ast is not None
                seen.add(result.strategy)
            else:
                assert result.ast is None
        assert seen == structural
