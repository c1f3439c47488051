import pytest

from src.app.entities import END, START
from src.app.services.failures_service import check_failures_equivalence
from src.app.services.io_process_service import (
    branch,
    branch_span,
    check_io_process,
    decode,
    depth,
    obs_in,
    obs_out,
    serialize,
)
from src.app.services.lts_service import compile, normalize
from src.app.services.parser_service import parse_spec
from src.exceptions import SerialShape
from tests.conftest import IO_HEADER

# ========== Helper Functions ==========

T_TABLE = [
    "(start, <c.in.v.1, c.in.v.2>, 0)",
    "(c.in.v.1, <c.out.v.1, c.out.v.2>, 1)",
    "(c.out.v.1, <end>, 2)",
    "(end, <>, 3)",
    "(c.out.v.2, <end>, 2)",
    "(end, <>, 3)",
    "(c.in.v.2, <c.out.v.3, c.out.v.4>, 1)",
    "(c.out.v.3, <end>, 2)",
    "(end, <>, 3)",
    "(c.out.v.4, <end>, 2)",
    "(end, <>, 3)",
]


def io_report(body: str, name: str = "P"):
    """Condition verdicts for one process over the one-channel header"""
    spec = parse_spec(IO_HEADER + "channel plain\n" + body)
    return check_io_process(compile(spec, spec.process(name)), spec.channels)


def norm_of(body: str, name: str = "P"):
    spec = parse_spec(IO_HEADER + body)
    return normalize(compile(spec, spec.process(name)))


# ========== Fixtures ==========


@pytest.fixture
def t_norm(t_models, t_spec):
    """Normal form of T"""
    return t_models.norm(t_spec.process("T"))


@pytest.fixture
def t_table(t_norm):
    """Serialized T"""
    return serialize(t_norm)


# ========== I/O Process Condition Tests ==========


class TestIoProcess:

    @pytest.mark.parametrize("name", ["T", "T'", "T''"])
    def test_t_family_are_io_processes(self, t_spec, name):
        """Test the T family satisfies every condition"""
        report = check_io_process(compile(t_spec, t_spec.process(name)), t_spec.channels)

        assert report.passed
        assert report.first_failure() is None

    def test_plain_channel_fails_first_condition(self):
        """Test events without in/out tags"""
        number, verdict = io_report("P = plain -> P").first_failure()

        assert number == 1
        assert verdict.counterexample.event.channel == "plain"

    def test_finite_process_fails_second_condition(self):
        """Test a process with only finite traces"""
        number, _ = io_report("P = c.in.v.1 -> STOP").first_failure()

        assert number == 2

    def test_divergence_fails_third_condition(self):
        """Test a hidden loop"""
        number, _ = io_report("Q = c.in.v.1 -> Q\nR = c.in.v.2 -> R\nP = (Q \\ {c.in.v.1}) ||| R").first_failure()

        assert number == 3

    def test_internal_input_choice_fails_fourth_condition(self):
        """Test inputs chosen internally are not deterministic"""
        number, verdict = io_report("P = c.in.v.1 -> P |~| c.in.v.2 -> P").first_failure()

        assert number == 4
        assert verdict.counterexample.trace == ()

    def test_external_output_choice_fails_fifth_condition(self):
        """Test outputs offered together are not decisive"""
        number, verdict = io_report("P = c.out.v.1 -> P [] c.out.v.2 -> P").first_failure()

        assert number == 5
        assert "never chosen internally" in verdict.counterexample.detail

    def test_refusable_output_fails_fifth_condition(self):
        """Test an output that can be refused outright"""
        number, _ = io_report("P = c.out.v.1 -> P |~| c.in.v.1 -> P").first_failure()

        assert number == 5


# ========== Observation Tests ==========


class TestObservations:

    def test_obs_in(self, t_norm, t_spec):
        """Test inputs offered at the start of T"""
        assert {str(e) for e in obs_in(t_norm, [])} == {"c.in.v.1", "c.in.v.2"}

    def test_obs_out(self, t_norm, t_spec):
        """Test outputs possible after an input"""
        after = [t_spec.event("c.in.v.2")]

        assert {str(e) for e in obs_out(t_norm, after)} == {"c.out.v.3", "c.out.v.4"}
        assert obs_in(t_norm, after) == frozenset()


# ========== Depth Tests ==========


class TestDepth:

    @pytest.mark.parametrize("name, expected", [("T", 2), ("T'", 4), ("T''", 5)])
    def test_t_family_depths(self, t_models, t_spec, name, expected):
        """Test the longest first return of each process"""
        assert depth(t_models.norm(t_spec.process(name))) == expected

    def test_cycle_avoiding_root(self):
        """Test a loop that never comes back is rejected"""
        norm = norm_of("P = c.in.v.1 -> Q\nQ = c.out.v.1 -> Q")

        with pytest.raises(SerialShape) as exc_info:
            depth(norm)

        assert exc_info.value.code == "E_SERIAL_SHAPE"
        assert "c.out.v.1" in exc_info.value.message

    def test_no_return(self):
        """Test a process that never returns has no depth"""
        with pytest.raises(SerialShape):
            depth(norm_of("P = c.in.v.1 -> STOP"))


# ========== Serialization Tests ==========


class TestSerialize:

    def test_t_table(self, t_table):
        """Test the serialized table of T row by row"""
        assert [str(entry) for entry in t_table.entries] == T_TABLE
        assert t_table.source_depth == 2

    def test_table_shape(self, t_table):
        """Test the table starts at level 0 and closes every return"""
        assert t_table.entries[0].ev == START
        assert t_table.entries[0].level == 0
        for entry, following in zip(t_table.entries, t_table.entries[1:]):
            if entry.a_ev == (END,):
                assert following.ev == END
                assert following.level == entry.level + 1

    def test_partition_of_events(self, t_table, t_spec):
        """Test inputs and outputs cover the declared events"""
        assert t_table.inputs | t_table.outputs == frozenset(t_spec.channels["c"].events)
        assert not t_table.inputs & t_table.outputs

    def test_larger_tables(self, t_models, t_spec):
        """Test extensions serialize to longer tables of their own depth"""
        table = serialize(t_models.norm(t_spec.process("T''")))

        assert table.source_depth == 5
        assert len(table.entries) > 11
        assert max(entry.level for entry in table.entries) == 6

    def test_decode_restores_failures(self, t_norm, t_table):
        """Test replaying the table gives back T"""
        decoded = normalize(decode(t_table, t_norm.universe))

        assert check_failures_equivalence(t_norm, decoded).passed


# ========== Branch Tests ==========


class TestBranch:

    def test_branch_of_second_input(self, t_table, t_spec):
        """Test the subtree under the second input runs to the end"""
        result = branch(t_spec.event("c.in.v.2"), t_table.entries, 1)

        assert [str(e) for e in result] == T_TABLE[6:]

    def test_branch_stops_at_sibling(self, t_table, t_spec):
        """Test the subtree under the first input stops at the next sibling"""
        result = branch(t_spec.event("c.in.v.1"), t_table.entries, 1)

        assert [str(e) for e in result] == T_TABLE[1:6]

    def test_branch_missing_key(self, t_table, t_spec):
        """Test an event absent at that level gives an empty branch"""
        assert branch(t_spec.event("c.in.v.3"), t_table.entries, 1) == ()

    def test_branch_span_matches_branch(self, t_table, t_spec):
        """Test the index form agrees with the list form"""
        entries = t_table.entries
        key = t_spec.event("c.in.v.1")

        start, stop = branch_span(entries, key, 0, len(entries), 1)

        assert entries[start:stop] == branch(key, entries, 1)
