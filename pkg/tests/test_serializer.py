"""Generation: determinism, size-ref soundness, crash witnesses, custom fields."""

import json
import stat
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import golden_paths, load_golden
from testforge import (
    NoEligibleField,
    StructureMismatch,
    generate,
    generate_fdp_calls,
    parse_testlang,
    structure_check,
)
from testforge import fdp as fdp_mod
from testforge.generators import (
    Budget,
    GeneratorTimeout,
    NonzeroExit,
    OutputTooLarge,
    run_external_generator,
)
from testforge.model import ExternalGenerator, RefSize
from testforge.rng import SplitRandom
from testforge.serializer import render_from_ast, render_record_standalone


def parse(obj):
    return parse_testlang(json.dumps(obj))


class TestDeterminism:
    @pytest.mark.parametrize("path", golden_paths(), ids=lambda p: p.stem)
    def test_same_seed_same_bytes(self, path):
        doc = parse_testlang(path.read_text(encoding="utf-8"))
        for mode in ("coverage", "crash"):
            a, _ = generate(doc, 99, mode)
            b, _ = generate(doc, 99, mode)
            assert a == b

    def test_different_seeds_usually_differ(self, tlv_message):
        blobs = {generate(tlv_message, seed)[0] for seed in range(20)}
        assert len(blobs) > 10

    def test_sibling_independence(self):
        """Adding a field does not perturb the draws of existing siblings."""
        base = {"records": [{"name": "INPUT", "fields": [
            {"name": "a", "kind": "int", "width": 32},
            {"name": "b", "kind": "int", "width": 32},
        ]}]}
        extended = {"records": [{"name": "INPUT", "fields": [
            {"name": "a", "kind": "int", "width": 32},
            {"name": "mid", "kind": "int", "width": 8},
            {"name": "b", "kind": "int", "width": 32},
        ]}]}
        _, ast1 = generate(parse(base), 5)
        _, ast2 = generate(parse(extended), 5)
        assert ast1.find("INPUT.a").value == ast2.find("INPUT.a").value
        assert ast1.find("INPUT.b").value == ast2.find("INPUT.b").value


class TestSizeRefs:
    def test_paper_shaped_size_ref_backpatch(self, simple_lookup):
        blob, ast = generate(simple_lookup, 11)
        size = ast.find("INPUT.lookup.table_size")
        table = ast.find("INPUT.lookup.table")
        assert size.value == table.length == len(table.value)
        assert blob[size.offset:size.offset + 2] == size.value.to_bytes(2, "big")

    @pytest.mark.parametrize("path", golden_paths(), ids=lambda p: p.stem)
    def test_size_ref_soundness(self, path):
        """Every ref-size field decodes to the measured span of its content."""
        doc = parse_testlang(path.read_text(encoding="utf-8"))
        for seed in range(25):
            _, ast = generate(doc, seed)
            _assert_size_refs_sound(doc, ast)


def _assert_size_refs_sound(doc, ast):
    def walk(node, record):
        by_name = {c.path.rsplit(".", 1)[-1].split("[")[0]: c for c in node.children}
        for child in node.children:
            name = child.path.rsplit(".", 1)[-1].split("[")[0]
            f = record.field_named(name)
            if f is None:
                continue
            spec = f.size if f.kind in ("bytes", "string", "custom") else f.count
            if isinstance(spec, RefSize):
                size_node = by_name[spec.ref]
                if spec.unit == "elements":
                    assert size_node.value == len(child.children)
                else:
                    assert size_node.value == child.length
            if f.kind == "record_ref":
                walk(child, doc.record_named(f.record))
    walk(ast.root, doc.entry)


class TestConstantForcing:
    def test_single_const_byte_field(self):
        doc = parse({"records": [{"name": "INPUT", "fields": [
            {"name": "b", "kind": "int", "width": 8, "constraint": {"const": 0x41}},
        ]}]})
        for seed in range(5):
            blob, _ = generate(doc, seed)
            assert blob == b"\x41"


class TestCrashMode:
    def test_range_violation_is_out_of_range_and_reported(self):
        doc = parse({"records": [{"name": "INPUT", "fields": [
            {"name": "v", "kind": "int", "width": 8, "constraint": {"range": [10, 100]}},
        ]}]})
        for seed in range(20):
            blob, ast = generate(doc, seed, "crash")
            assert ast.violated_fields == ["INPUT.v"]
            assert not 10 <= blob[0] <= 100
            with pytest.raises(StructureMismatch) as exc:
                structure_check(doc, blob)
            assert exc.value.code == "ConstraintViolated"
            assert exc.value.field == "INPUT.v"

    def test_no_eligible_field(self):
        doc = parse({"records": [{"name": "INPUT", "fields": [
            {"name": "x", "kind": "int", "width": 32},
        ]}]})
        with pytest.raises(NoEligibleField):
            generate(doc, 0, "crash")

    @pytest.mark.parametrize("path", golden_paths(), ids=lambda p: p.stem)
    def test_crash_witness_on_golden_docs(self, path):
        doc = parse_testlang(path.read_text(encoding="utf-8"))
        for seed in range(25):
            blob, ast = generate(doc, seed, "crash")
            assert ast.mode_used == "crash"
            assert len(ast.violated_fields) == 1
            with pytest.raises(StructureMismatch) as exc:
                structure_check(doc, blob)
            assert exc.value.field == ast.violated_fields[0]

    def test_size_violation_menu(self, tlv_message):
        seen = set()
        for seed in range(200):
            blob, ast = generate(tlv_message, seed, "crash")
            [path] = ast.violated_fields
            if path in ("INPUT.msg.len", "INPUT.msg.body"):
                size_value = int.from_bytes(blob[2:4], "big")
                body_len = len(blob) - 4
                assert size_value != body_len
                seen.add("undercount" if size_value < body_len else "overcount")
        assert seen == {"undercount", "overcount"}


class TestAstSpans:
    @pytest.mark.parametrize("path", golden_paths(), ids=lambda p: p.stem)
    def test_leaf_spans_partition_the_blob(self, path):
        doc = parse_testlang(path.read_text(encoding="utf-8"))
        for seed in range(10):
            blob, ast = generate(doc, seed)
            pos = 0
            for leaf in ast.leaves():
                assert leaf.offset == pos
                pos += leaf.length
            assert pos == len(blob)


class TestRenderFromAst:
    @pytest.mark.parametrize("path", golden_paths(), ids=lambda p: p.stem)
    def test_replay_reproduces_bytes(self, path):
        doc = parse_testlang(path.read_text(encoding="utf-8"))
        blob, ast = generate(doc, 17)
        again, _ = render_from_ast(doc, ast)
        assert again == blob

    def test_override_changes_one_leaf_and_repatches(self, tlv_message):
        blob, ast = generate(tlv_message, 17)
        new, new_ast = render_from_ast(
            tlv_message, ast, overrides={"INPUT.msg.body": b"abcdefgh"})
        assert new_ast.find("INPUT.msg.len").value == 8
        assert structure_check(tlv_message, new).find("INPUT.msg.body").value == b"abcdefgh"

    def test_standalone_record_fragment(self, simple_lookup):
        fragment = render_record_standalone(simple_lookup, "Lookup", 3)
        size = int.from_bytes(fragment[:2], "big")
        assert len(fragment) == 2 + size


class TestExternalGenerators:
    def test_builtin_ascii_digits(self):
        rng = SplitRandom(1).stream("x")
        from testforge.model import BuiltinGenerator
        out = run_external_generator(
            BuiltinGenerator("ascii_digits", (("length", 4),)), rng)
        assert len(out) == 4 and all(0x30 <= b <= 0x39 for b in out)

    def test_false_command_raises_nonzero_exit(self):
        rng = SplitRandom(1).stream("x")
        with pytest.raises(NonzeroExit) as exc:
            run_external_generator(ExternalGenerator("false"), rng)
        assert exc.value.status == 1

    def test_output_over_cap(self, tmp_path):
        script = tmp_path / "big.py"
        script.write_text(
            "import os, sys\n"
            "cap = int(os.environ['TESTFORGE_MAX_BYTES'])\n"
            "sys.stdout.buffer.write(b'A' * (cap + 1))\n")
        rng = SplitRandom(1).stream("x")
        with pytest.raises(OutputTooLarge):
            run_external_generator(
                ExternalGenerator(f"{sys.executable} {script}"), rng,
                budget=Budget(max_bytes=64))

    def test_timeout(self, tmp_path):
        script = tmp_path / "slow.py"
        script.write_text("import time; time.sleep(30)\n")
        rng = SplitRandom(1).stream("x")
        with pytest.raises(GeneratorTimeout):
            run_external_generator(
                ExternalGenerator(f"{sys.executable} {script}"), rng,
                budget=Budget(timeout=0.3))

    def test_env_protocol(self, tmp_path):
        script = tmp_path / "env.py"
        script.write_text(
            "import os, sys\n"
            "sys.stdout.write(os.environ['TESTFORGE_FIELD'] + '|' "
            "+ os.environ['TESTFORGE_SEED'])\n")
        rng = SplitRandom(1).stream("x")
        out = run_external_generator(
            ExternalGenerator(f"{sys.executable} {script}"), rng, field_path="INPUT.f")
        field, seed = out.decode().split("|")
        assert field == "INPUT.f"
        assert seed.isdigit()

    def test_external_generator_in_a_document(self, tmp_path):
        script = tmp_path / "gen.py"
        script.write_text("import sys; sys.stdout.write('XYZ')\n")
        script.chmod(script.stat().st_mode | stat.S_IEXEC)
        doc = parse({"records": [{"name": "INPUT", "fields": [
            {"name": "n", "kind": "int", "width": 8},
            {"name": "body", "kind": "custom", "size": {"ref": "n"},
             "generator": {"command": f"{sys.executable} {script}"}},
        ]}]})
        blob, ast = generate(doc, 0)
        assert ast.find("INPUT.body").value == b"XYZ"
        structure_check(doc, blob)


class TestFdpGeneration:
    def test_five_call_shape(self, fdp_doc):
        calls, ast = generate_fdp_calls(fdp_doc, 4)
        assert len(calls) == 5
        assert isinstance(calls[0], fdp_mod.ProduceIntInRange)
        assert (calls[0].lo, calls[0].hi) == (10, 100)
        assert isinstance(calls[1], fdp_mod.ProduceInt)
        assert isinstance(calls[2], fdp_mod.ProduceIntInRange)
        assert (calls[2].lo, calls[2].hi) == (0, 1)
        assert isinstance(calls[3], fdp_mod.ProduceIntInRange)
        assert (calls[3].lo, calls[3].hi) == (0, 3)
        assert isinstance(calls[-1], fdp_mod.ProduceRemainingBytes)

    def test_same_seed_identical_call_lists(self, fdp_doc):
        a, _ = generate_fdp_calls(fdp_doc, 123)
        b, _ = generate_fdp_calls(fdp_doc, 123)
        assert a == b

    def test_empty_record_gives_empty_blob(self):
        doc = parse({"mode": "fdp", "records": [
            {"name": "INPUT", "fields": [
                {"name": "rest", "kind": "bytes", "size": {"min": 0, "max": 0}},
            ]},
        ]})
        calls, _ = generate_fdp_calls(doc, 1)
        assert fdp_mod.encode("llvm", calls) == b""

    def test_ref_sizes_are_unsupported(self):
        doc = parse({"mode": "fdp", "records": [{"name": "INPUT", "fields": [
            {"name": "n", "kind": "int", "width": 8},
            {"name": "b", "kind": "bytes", "size": {"ref": "n"}},
        ]}]})
        from testforge import UnsupportedKindForFdp
        with pytest.raises(UnsupportedKindForFdp):
            generate_fdp_calls(doc, 0)

    def test_bytes_mode_document_rejected(self, simple_lookup):
        from testforge import GenerationError
        with pytest.raises(GenerationError):
            generate_fdp_calls(simple_lookup, 0)

    def test_crash_mode_pins_an_extreme(self, fdp_doc):
        calls, ast = generate_fdp_calls(fdp_doc, 9, "crash")
        [path] = ast.violated_fields
        node = ast.find(path)
        assert node is not None
        blob = fdp_mod.encode("llvm", calls)
        assert isinstance(blob, bytes)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**63))
def test_roundtrip_property_random_seeds(seed):
    doc = load_golden("02_tlv_message.json")
    blob, _ = generate(doc, seed)
    structure_check(doc, blob)
