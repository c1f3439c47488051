import pytest

from src.app.entities import Direction, TypeKind
from src.app.printer import format_spec
from src.app.services.parser_service import alphabet, parse_spec
from src.app.syntax import AssertionKind, Call, Name, Ref, children
from src.exceptions import ArityMismatch, SyntaxErrorInSpec, TypeMismatch, UnboundName
from tests.conftest import IO_HEADER

# ========== Helper Functions ==========


def spec_of(body: str):
    """Parse a script prefixed with the one-channel header"""
    return parse_spec(IO_HEADER + body)


# ========== Type and Channel Tests ==========


class TestDeclarations:

    def test_product_type_values(self, t_spec):
        """Test a dotted datatype enumerates every combination"""
        assert t_spec.types["VAL"].values == (("v", 1), ("v", 2), ("v", 3), ("v", 4))
        assert t_spec.types["IO"].kind is TypeKind.UNION

    def test_nametype_range(self):
        """Test a nametype over a range becomes an integer type"""
        spec = parse_spec("nametype DD = {0..5}\nchannel d : DD")

        assert spec.types["DD"].kind is TypeKind.INT_RANGE
        assert len(spec.channels["d"].events) == 6

    def test_io_channel_orders_inputs_first(self, t_spec):
        """Test channel events are ranked inputs first, then outputs"""
        events = t_spec.channels["c"].events

        assert [e.direction for e in events] == [Direction.IN] * 4 + [Direction.OUT] * 4
        assert [str(e) for e in events[:2]] == ["c.in.v.1", "c.in.v.2"]
        assert all(a.rank < b.rank for a, b in zip(events, events[1:]))

    def test_plain_channel(self):
        """Test a channel without payload carries one plain event"""
        spec = parse_spec("channel tick\nP = tick -> P")

        (event,) = spec.channels["tick"].events
        assert event.direction is Direction.PLAIN
        assert not spec.channels["tick"].io_discipline

    def test_catalogue_lookup(self, t_spec):
        """Test events are found by their printed name"""
        event = t_spec.event("c.out.v.3")

        assert event.channel == "c"
        assert event.direction is Direction.OUT
        assert event.value == ("v", 3)

    def test_catalogue_lookup_unknown(self, t_spec):
        """Test an unknown event name raises KeyError"""
        with pytest.raises(KeyError):
            t_spec.event("c.out.v.9")

    def test_duplicate_type(self):
        """Test a type declared twice is reported"""
        with pytest.raises(SyntaxErrorInSpec):
            parse_spec("datatype A = x | y\ndatatype A = z")

    def test_empty_type(self):
        """Test an empty value set is reported"""
        with pytest.raises(TypeMismatch):
            parse_spec("nametype E = {}")


# ========== Process Tests ==========


class TestProcesses:

    def test_references_resolved(self, t_spec):
        """Test process names inside bodies become references"""
        body = t_spec.processes["T"].body

        def refs(node):
            found = {node.name} if isinstance(node, Ref) else set()
            for child in children(node):
                found |= refs(child)
            return found

        assert refs(body) == {"T"}

    def test_primed_names(self, t_spec):
        """Test names may end in primes"""
        assert {"T", "T'", "T''"} <= set(t_spec.processes)

    def test_parameters(self):
        """Test parameterised definitions keep their parameters"""
        spec = spec_of("P(n) = if n == 0 then STOP else c.out.v.1 -> P(n - 1)")

        assert spec.processes["P"].params == ("n",)

    def test_arity_mismatch(self):
        """Test a call with the wrong number of arguments"""
        with pytest.raises(ArityMismatch):
            spec_of("P(n) = c.out.v.1 -> P(n)\nQ = P")

    def test_unbound_name(self):
        """Test an undeclared name is reported with its line"""
        with pytest.raises(UnboundName) as exc_info:
            spec_of("P = c.in.v.1 -> NOWHERE")

        assert exc_info.value.diagnostics
        assert exc_info.value.diagnostics[0].code == "E_UNBOUND"

    def test_syntax_error_position(self):
        """Test a parse error carries a diagnostic with a line"""
        with pytest.raises(SyntaxErrorInSpec) as exc_info:
            parse_spec("channel a\nP = a -> -> STOP", source="broken.iop")

        diagnostic = exc_info.value.diagnostics[0]
        assert diagnostic.code == "E_SYNTAX"
        assert diagnostic.source == "broken.iop"
        assert diagnostic.line == 2

    def test_comments_ignored(self):
        """Test line and block comments are skipped"""
        spec = spec_of("-- a comment\n{- a block\ncomment -}\nP = c.in.v.1 -> P")

        assert "P" in spec.processes

    def test_include_needs_loader(self):
        """Test include without a loader is a syntax error"""
        with pytest.raises(SyntaxErrorInSpec):
            parse_spec('include "other.iop"')

    def test_include_with_loader(self):
        """Test included declarations are spliced in"""
        files = {"types.iop": IO_HEADER}

        def loader(path, including):
            return files[path], path

        spec = parse_spec('include "types.iop"\nP = c.in.v.1 -> P', "main.iop", loader=loader)

        assert "c" in spec.channels
        assert "P" in spec.processes

    def test_alphabet(self, t_spec):
        """Test a process mentioning a channel gets all of its events"""
        events = alphabet(t_spec, t_spec.process("T"))

        assert events == frozenset(t_spec.channels["c"].events)


# ========== Assertion Tests ==========


class TestAssertions:

    def test_kinds_and_ids(self, t_spec):
        """Test assertions are numbered in script order"""
        kinds = [a.kind for a in t_spec.assertions]

        assert [a.id for a in t_spec.assertions] == list(range(1, len(kinds) + 1))
        assert kinds[:3] == [AssertionKind.IO_PROCESS] * 3
        assert kinds[-2:] == [AssertionKind.CVG, AssertionKind.ECVG]

    def test_assertion_text(self, t_spec):
        """Test every assertion keeps its source line"""
        last = t_spec.assertions[-1]

        assert last.text == "assert T'' ecvg T"
        assert last.line > 0

    def test_generator_operand(self, t_spec):
        """Test GLB operators stay calls after resolution"""
        refine = next(a for a in t_spec.assertions if a.kind is AssertionKind.FAILURES_REFINE)

        assert isinstance(refine.operands[0], Call)
        assert refine.operands[0].name == "GLB_CVG"

    def test_options(self):
        """Test per-assertion options"""
        spec = spec_of("P = c.in.v.1 -> P\nassert P cvg P with gap = 2, buffer = 3")

        (assertion,) = spec.assertions
        assert [k for k, _ in assertion.options] == ["gap", "buffer"]

    def test_decoupled(self):
        """Test the decoupled property takes two channel names"""
        spec = parse_spec(
            IO_HEADER
            + "channel d : IO\nP = c.in.v.1 -> P ||| d.out.v.1 -> P\nassert P :[decoupled c, d]"
        )

        (assertion,) = spec.assertions
        assert assertion.kind is AssertionKind.DECOUPLED
        assert [o.id for o in assertion.operands[1:]] == ["c", "d"]

    def test_contract_operands(self, load_corpus):
        """Test contract names and compositions resolve in assertions"""
        spec = load_corpus("robot_checks.iop")
        bric = next(a for a in spec.assertions if a.kind is AssertionKind.BRIC_REFINE)

        assert bric.operands == (Name("Ctr_HC_BOT"), Name("Ctr_HC_BOT_ACC"))
        assert spec.contracts["Ctr_SYS"].composition.name == "comm"


# ========== Printer Tests ==========


class TestPrinter:

    def test_printed_spec_reparses(self, t_spec):
        """Test the printer output parses back to the same processes"""
        reparsed = parse_spec(format_spec(t_spec))

        assert reparsed.processes == t_spec.processes
        assert [a.kind for a in reparsed.assertions] == [a.kind for a in t_spec.assertions]
