import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from smforge import ir, umple
from helpers import machines


def roundtrip(sm: ir.StateMachine) -> umple.UmpleDocument:
    return umple.parse_umple(umple.emit_umple(sm), umple.STRICT)


class TestEmit:
    def test_transition_inside_source_block(self):
        sm = ir.machine("m", [ir.simple("A"), ir.simple("B")], [ir.transition("A", "B", event="go")])
        text = umple.emit_umple(sm)
        block = text.split("A {", 1)[1].split("}", 1)[0]
        assert "go -> B;" in block

    def test_regions_separated_by_parallel_marker(self):
        sm = ir.machine("m", [ir.composite("C", [[ir.simple("X")], [ir.simple("Y")]])])
        assert "||" in umple.emit_umple(sm)

    def test_history_marker_emitted(self):
        sm = ir.machine("m", [ir.composite("C", [[ir.simple("X")]], has_history=True)])
        assert "H;" in umple.emit_umple(sm)

    def test_guard_and_actions_syntax(self):
        sm = ir.machine(
            "m",
            [ir.simple("A"), ir.simple("B")],
            [ir.transition("A", "B", event="go", guard="x > 0", actions=["beep", "log it"])],
        )
        assert "go [x > 0] / { beep; log it } -> B;" in umple.emit_umple(sm)

    def test_invalid_machine_rejected(self):
        sm = ir.machine("m", [ir.simple("A")], [ir.transition("A", "Ghost")])
        with pytest.raises(ir.InvalidMachine):
            umple.emit_umple(sm)


class TestStrictParse:
    def test_roundtrip_simple(self):
        sm = ir.machine("Demo", [ir.simple("A"), ir.simple("B")], [ir.transition("A", "B", event="go")])
        doc = roundtrip(sm)
        assert doc.diagnostics == []
        assert ir.equivalent(doc.machine, sm)
        assert doc.machine.name == "Demo"

    def test_initial_is_first_substate(self):
        text = "class M { sm { C { First { } Second { go -> First; } } } }"
        doc = umple.parse_umple(text, umple.STRICT)
        region = doc.machine.root_states[0].regions[0]
        assert region.initial == "First"

    def test_malformed_raises_with_diagnostics(self):
        with pytest.raises(umple.ParseFailed) as err:
            umple.parse_umple("A { go -> ; }", umple.STRICT)
        assert any(d.severity == "error" for d in err.value.diagnostics)

    def test_unknown_target_is_strict_error(self):
        with pytest.raises(umple.ParseFailed):
            umple.parse_umple("A { go -> Ghost; }", umple.STRICT)

    def test_corpus_roundtrip(self, mini_corpus):
        for scenario in mini_corpus.values():
            doc = roundtrip(scenario.truth)
            assert doc.diagnostics == []
            assert ir.equivalent(doc.machine, scenario.truth), scenario.id
            assert doc.machine.name == scenario.truth.name


class TestLenientParse:
    def test_fenced_block_parses_clean(self):
        sm = ir.machine("Demo", [ir.simple("A"), ir.simple("B")], [ir.transition("A", "B", event="go")])
        text = "Sure, here is the machine:\n\n```umple\n" + umple.emit_umple(sm) + "```\nHope this helps!"
        doc = umple.parse_umple(text, umple.LENIENT)
        assert ir.equivalent(doc.machine, sm)
        assert not any(d.severity == "error" for d in doc.diagnostics)
        assert doc.diagnostics == []

    def test_wrapper_variants(self):
        for text in (
            "state machine sm { A { } }",
            "sm { A { } }",
            "statemachine { A { } }",
            "class Demo { sm { A { } } }",
        ):
            doc = umple.parse_umple(text, umple.LENIENT)
            assert [n.name for n in doc.machine.root_states] == ["A"], text

    def test_dropped_transition_with_warning(self):
        doc = umple.parse_umple("state machine sm { A { go -> ; } }", umple.LENIENT)
        assert [n.name for n in doc.machine.root_states] == ["A"]
        assert doc.machine.transitions == ()
        assert len(doc.diagnostics) == 1
        assert doc.diagnostics[0].severity == "warning"

    def test_unknown_target_dropped(self):
        doc = umple.parse_umple("A { go -> Ghost; }", umple.LENIENT)
        assert doc.machine.transitions == ()
        assert any("Ghost" in d.message for d in doc.diagnostics)

    def test_prose_without_fences(self):
        doc = umple.parse_umple("The machine follows. A { go -> B; } B { }", umple.LENIENT)
        assert {n.name for n in doc.machine.root_states} == {"A", "B"}
        assert len(doc.machine.transitions) == 1

    def test_duplicate_state_dropped(self):
        doc = umple.parse_umple("A { } a { }", umple.LENIENT)
        assert [n.name for n in doc.machine.root_states] == ["A"]
        assert any("duplicate" in d.message for d in doc.diagnostics)

    def test_result_always_validates(self):
        doc = umple.parse_umple("H; A { H; } ||", umple.LENIENT)
        assert ir.validate(doc.machine) == []

    def test_never_raises_mode_contract(self):
        # A grab bag of hostile inputs; lenient must return a machine.
        for text in ("", "}}}}", "-> -> ->", "[unclosed", "/ {", "a { b { c {", "|| || ||"):
            doc = umple.parse_umple(text, umple.LENIENT)
            assert doc.machine is not None
            assert ir.validate(doc.machine) == []


class TestProperties:
    @given(machines())
    @settings(max_examples=60, deadline=None)
    def test_roundtrip(self, sm):
        doc = roundtrip(sm)
        assert doc.diagnostics == []
        assert ir.equivalent(doc.machine, sm)

    @given(st.text(max_size=300))
    @settings(max_examples=150, deadline=None)
    def test_lenient_total(self, text):
        doc = umple.parse_umple(text, umple.LENIENT)
        assert doc.machine is not None
        assert ir.validate(doc.machine) == []

    @given(machines())
    @settings(max_examples=30, deadline=None)
    def test_strict_accepted_implies_lenient_same_machine(self, sm):
        text = umple.emit_umple(sm)
        strict = umple.parse_umple(text, umple.STRICT)
        lenient = umple.parse_umple(text, umple.LENIENT)
        assert ir.equivalent(strict.machine, lenient.machine)
