from functools import reduce

import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.app.entities import BufferSpec, CheckOptions, Relation, Status, walk_model
from src.app.services.bric_service import (
    CONFLUENCE_UNCHECKED,
    ContractService,
    _fifo,
    check_fop,
    check_normal_form,
    io_renaming,
    make_buffer,
)
from src.app.services.failures_service import check_deadlock_free, traces_upto
from src.app.services.lts_service import ModelCache, compile, normalize
from src.app.services.parser_service import parse_spec
from src.app.syntax import Call, Interleave, Name, Stop
from src.exceptions import (
    ChannelClash,
    DeadlockIntroduced,
    InvalidContract,
    NotDecoupled,
    SideConditionFailed,
    UnboundName,
)
from tests.conftest import IO_HEADER, examples
from tests.strategies import io_pairs, io_script

# ========== Helper Functions ==========

CONTRACTS = """
datatype VAL = v.{1..2}
datatype IO = in.VAL | out.VAL
subtype INS = in.VAL
subtype OUTS = out.VAL
channel a, b, d, e : IO

RELAY = a.in?x -> b.out!x -> RELAY
ANY = a.in?x -> (b.out.v.1 -> ANY |~| b.out.v.2 -> ANY)
SINK = d.in?x -> e.out!x -> SINK
PICKY = d.in.v.1 -> e.out.v.1 -> PICKY
GEN = b.out.v.1 -> a.in?x -> GEN
FIN = a.in.v.1 -> STOP
LEFT = a.in?x -> LEFT
RIGHT = b.out.v.1 -> RIGHT
BOTH = LEFT ||| RIGHT
PLEFT = a.in.v.2 -> PLEFT
OPEN = a.in?x -> OPEN
PING = b.out.v.1 -> b.in?x -> PING
SPLIT = PLEFT ||| PING
LOOSE = OPEN ||| PING

contract Ctr_RELAY { behaviour RELAY; channel a : IO; channel b : IO; }
contract Ctr_NARROW { behaviour RELAY; channel a : INS; channel b : OUTS; }
contract Ctr_ANY { behaviour ANY; channel a : IO; channel b : IO; }
contract Ctr_SINK { behaviour SINK; channel d : IO; channel e : IO; }
contract Ctr_PICKY { behaviour PICKY; channel d : IO; channel e : IO; }
contract Ctr_GEN { behaviour GEN; channel a : IO; channel b : IO; }
contract Ctr_STRAY { behaviour RELAY; channel a : IO; }
contract Ctr_FIN { behaviour FIN; channel a : IO; }
contract Ctr_SPLIT { behaviour SPLIT; channel a : IO; channel b : IO; }
contract Ctr_LOOSE { behaviour LOOSE; channel a : IO; channel b : IO; }
contract Ctr_PIPE = comm(Ctr_RELAY, b, Ctr_SINK, d)
"""


def fop_of(body: str):
    spec = parse_spec(IO_HEADER + body)
    return check_fop(normalize(compile(spec, spec.process("P"))))


# ========== Fixtures ==========


@pytest.fixture(scope="module")
def contract_spec():
    """Inline script with small relay, sink and generator contracts"""
    return parse_spec(CONTRACTS, "contracts.iop")


@pytest.fixture
def service(contract_spec):
    """Contract service over the inline script"""
    return ContractService(contract_spec)


@pytest.fixture
def t_contracts(corpus_dir, load_corpus, tmp_path):
    """Contracts wrapping the T family"""
    script = tmp_path / "t_contracts.iop"
    script.write_text(
        f'include "{corpus_dir / "t_family.iop"}"\n'
        "contract Ctr_T { behaviour T; channel c : IO; }\n"
        "contract Ctr_T1 { behaviour T'; channel c : IO; }\n"
        "contract Ctr_T2 { behaviour T''; channel c : IO; }\n"
    )
    spec = load_corpus(str(script))
    return ContractService(spec, CheckOptions())


# ========== Side Condition Tests ==========


class TestFreeOfOutputLoops:

    def test_output_loop(self):
        """Test a cycle of outputs only is reported"""
        verdict = fop_of("P = c.out.v.1 -> c.out.v.2 -> P")

        assert verdict.status is Status.FAIL
        assert "can repeat forever" in verdict.counterexample.detail

    def test_output_loop_after_prefix(self):
        """Test the witness trace leads into the loop"""
        verdict = fop_of("Q = c.out.v.1 -> Q\nP = c.in.v.1 -> Q")

        assert [str(e) for e in verdict.counterexample.trace] == ["c.in.v.1"]

    def test_input_breaks_loop(self):
        """Test a cycle with an input is accepted"""
        assert fop_of("P = c.in.v.1 -> c.out.v.1 -> P").passed


class TestNormalForm:

    def test_declared_composition(self, contract_spec):
        """Test a composition declared in a script is in normal form"""
        assert check_normal_form(contract_spec.contracts["Ctr_PIPE"].composition)

    @pytest.mark.parametrize(
        "expr",
        [
            Name("Ctr_A"),
            Call("interleave", (Name("Ctr_A"), Name("Ctr_B"))),
            Call("feedback", (Call("interleave", (Name("Ctr_A"), Name("Ctr_B"))), Name("a"), Name("b"))),
            Call("reflexive", (Name("Ctr_A"), Name("a"), Name("b"))),
        ],
    )
    def test_safe_rules(self, expr):
        """Test every safe rule is accepted"""
        assert check_normal_form(expr)

    @pytest.mark.parametrize(
        "expr",
        [
            Call("hide", (Name("Ctr_A"), Name("a"))),
            Call("comm", (Name("Ctr_A"), Name("a"), Name("Ctr_B"))),
            Call("interleave", (Name("Ctr_A"), Call("hide", (Name("Ctr_B"),)))),
        ],
    )
    def test_other_shapes(self, expr):
        """Test unknown operators and wrong arities are rejected"""
        assert not check_normal_form(expr)


# ========== Buffer Tests ==========


class TestBuffers:

    def test_io_renaming(self, contract_spec):
        """Test outputs of one channel pair with inputs of the other"""
        pairs = io_renaming(contract_spec, "b", "d")

        assert [(str(o), str(i)) for o, i in pairs] == [
            ("b.out.v.1", "d.in.v.1"),
            ("b.out.v.2", "d.in.v.2"),
        ]

    def test_fifo_states(self, contract_spec):
        """Test a FIFO has one definition per reachable queue"""
        mapping = io_renaming(contract_spec, "b", "d")

        one, _ = _fifo(mapping, 1)
        two, root = _fifo(mapping, 2)

        assert len(one) == 3
        assert len(two) == 1 + 2 + 4
        assert root.name == "BUFF_b_d_2_q"
        assert all(d.name.startswith("BUFF_b_d_2_q") for d in two)

    def test_empty_mapping_is_stop(self):
        """Test a direction with nothing to carry stops"""
        assert _fifo((), 1) == ((), Stop())

    def test_make_buffer(self, contract_spec):
        """Test both directions run side by side"""
        buffer = BufferSpec(1, io_renaming(contract_spec, "b", "d"), io_renaming(contract_spec, "d", "b"))

        definitions, behaviour = make_buffer(buffer)

        assert isinstance(behaviour, Interleave)
        assert len(definitions) == 6

    def test_capacity_must_be_positive(self, contract_spec):
        """Test a zero capacity is rejected"""
        with pytest.raises(InvalidContract):
            BufferSpec(0, io_renaming(contract_spec, "b", "d"), ())

    def test_renaming_direction(self, contract_spec):
        """Test the buffer maps outputs to inputs only"""
        reversed_map = tuple((i, o) for o, i in io_renaming(contract_spec, "b", "d"))

        with pytest.raises(InvalidContract):
            BufferSpec(1, reversed_map, ())


# ========== Contract Tests ==========


class TestContracts:

    def test_atomic_contract(self, service):
        """Test a declared contract keeps its channels and interfaces"""
        ctr = service.contract("Ctr_RELAY")

        assert ctr.channels == ("a", "b")
        assert ctr.atomic
        assert service.contract("Ctr_RELAY") is ctr

    def test_unknown_contract(self, service):
        """Test an undeclared contract name"""
        with pytest.raises(UnboundName):
            service.contract("Ctr_NOWHERE")

    def test_stray_channel(self, service):
        """Test a behaviour using channels outside the contract"""
        with pytest.raises(InvalidContract) as exc_info:
            service.contract("Ctr_STRAY")

        assert "b" in exc_info.value.message

    def test_behaviour_not_io_process(self, service):
        """Test an atomic contract must wrap an I/O process"""
        with pytest.raises(InvalidContract) as exc_info:
            service.contract("Ctr_FIN")

        assert "condition 2" in exc_info.value.message

    def test_per_channel_semantics(self, service):
        """Test each channel gets its own normal form"""
        denotation = service.contract_semantics(service.contract("Ctr_RELAY"))

        on_a = denotation.per_channel["a"]
        assert set(denotation.per_channel) == {"a", "b"}
        assert all(e.channel == "a" for e in on_a.alphabet)


# ========== Composition Tests ==========


class TestComposition:

    def test_communication(self, service):
        """Test hooking the relay to the sink hides the joined channels"""
        pipe = service.contract("Ctr_PIPE")

        assert pipe.name == "Ctr_PIPE"
        assert pipe.channels == ("a", "e")
        assert not pipe.atomic
        assert CONFLUENCE_UNCHECKED in pipe.notes

    def test_communication_deadlock_free(self, service):
        """Test the buffered pipe never deadlocks"""
        pipe = service.contract("Ctr_PIPE")

        assert check_deadlock_free(service.models.norm(pipe.behaviour, True, pipe.definitions)).passed

    def test_strong_compat(self, service):
        """Test every relay output is an input the sink offers"""
        verdict = service.check_strong_compat(service.contract("Ctr_RELAY"), "b", service.contract("Ctr_SINK"), "d")

        assert verdict.passed

    def test_strong_compat_fails(self, service):
        """Test an output the other side never takes"""
        verdict = service.check_strong_compat(
            service.contract("Ctr_RELAY"), "b", service.contract("Ctr_PICKY"), "d"
        )

        assert verdict.status is Status.FAIL
        assert str(verdict.counterexample.event) == "b.out.v.2"
        assert "not consumed" in verdict.counterexample.detail

    def test_incompatible_communication(self, service):
        """Test composing incompatible contracts raises"""
        with pytest.raises(SideConditionFailed):
            service.compose_communication(
                service.contract("Ctr_RELAY"), "b", service.contract("Ctr_PICKY"), "d"
            )

    def test_channel_clash(self, service):
        """Test two contracts owning the same channel"""
        relay = service.contract("Ctr_RELAY")

        with pytest.raises(ChannelClash):
            service.compose_interleave(relay, service.contract("Ctr_ANY"))

    def test_interleave(self, service):
        """Test interleaving keeps every channel"""
        both = service.compose_interleave(service.contract("Ctr_RELAY"), service.contract("Ctr_SINK"))

        assert both.channels == ("a", "b", "d", "e")

    def test_reflexive(self, service):
        """Test hooking the generator back to itself keeps running"""
        looped = service.compose_reflexive(service.contract("Ctr_GEN"), "b", "a")

        assert looped.channels == ()

    def test_reflexive_deadlock(self, service):
        """Test the relay waits forever for its own output"""
        with pytest.raises(DeadlockIntroduced):
            service.compose_reflexive(service.contract("Ctr_RELAY"), "b", "a")

    def test_feedback_needs_decoupling(self, service):
        """Test feedback over coupled channels raises"""
        with pytest.raises(NotDecoupled):
            service.compose_feedback(service.contract("Ctr_RELAY"), "b", "a")

    def test_feedback(self, service):
        """Test feedback over decoupled and compatible channels"""
        looped = service.compose_feedback(service.contract("Ctr_LOOSE"), "b", "a")

        assert looped.channels == ()
        assert CONFLUENCE_UNCHECKED in looped.notes

    def test_feedback_incompatible(self, service):
        """Test feedback whose output the other channel never takes raises"""
        with pytest.raises(SideConditionFailed) as exc_info:
            service.compose_feedback(service.contract("Ctr_SPLIT"), "b", "a")

        assert exc_info.value.code == "E_SIDE_CONDITION"
        assert "b.out.v.1" in str(exc_info.value)

    def test_decoupled(self, service, contract_spec):
        """Test independent channels are decoupled"""
        assert service.check_decoupled(contract_spec.process("BOTH"), "a", "b").passed
        assert not service.check_decoupled(contract_spec.process("RELAY"), "a", "b").passed

    def test_evaluate_expression(self, service):
        """Test a composition expression evaluates to a contract"""
        ctr = service.evaluate(Call("interleave", (Name("Ctr_RELAY"), Name("Ctr_SINK"))))

        assert set(ctr.channels) == {"a", "b", "d", "e"}


# ========== Relation Tests ==========


class TestRelations:

    def test_bric_refinement_reflexive(self, service):
        """Test a contract refines itself"""
        relay = service.contract("Ctr_RELAY")

        verdict = service.check_bric_refinement(relay, relay)

        assert verdict.passed
        assert "channels equal" in verdict.notes

    def test_bric_refinement_resolves_choice(self, service):
        """Test a deterministic relay refines the nondeterministic one"""
        relay, anything = service.contract("Ctr_RELAY"), service.contract("Ctr_ANY")

        assert service.check_bric_refinement(anything, relay).passed
        assert service.check_bric_refinement(relay, anything).notes == ("behaviour",)

    def test_bric_refinement_channels_differ(self, service):
        """Test contracts over different channels"""
        verdict = service.check_bric_refinement(service.contract("Ctr_RELAY"), service.contract("Ctr_SINK"))

        assert verdict.status is Status.FAIL
        assert "channel sets differ" in verdict.counterexample.detail

    def test_bric_refinement_interfaces(self, service):
        """Test interfaces must grow along the refinement"""
        wide, narrow = service.contract("Ctr_RELAY"), service.contract("Ctr_NARROW")

        assert "not included" in service.check_bric_refinement(wide, narrow).counterexample.detail
        assert service.check_bric_refinement(narrow, wide).passed

    def test_inheritance_reflexive(self, t_contracts):
        """Test a contract inherits from itself on the default congruence"""
        t = t_contracts.contract("Ctr_T")

        verdict = t_contracts.check_inheritance(t, t, Relation.CVG)

        assert verdict.passed
        assert "c: default congruence" in verdict.notes

    def test_inheritance_behaviour_note(self, t_contracts):
        """Test the behaviour check is recorded first"""
        verdict = t_contracts.check_inheritance(
            t_contracts.contract("Ctr_T"), t_contracts.contract("Ctr_T1"), Relation.CVG
        )

        assert verdict.notes[0].startswith("behaviour cvg by")

    def test_inheritance_fails_on_behaviour(self, t_contracts):
        """Test new outputs break plain convergence"""
        verdict = t_contracts.check_inheritance(
            t_contracts.contract("Ctr_T"), t_contracts.contract("Ctr_T2"), Relation.CVG
        )

        assert verdict.status is Status.FAIL


# ========== Property Tests ==========

SYSTEM_HEADER = """
datatype VAL = v.{1..2}
datatype IO = in.VAL | out.VAL
channel k0, k1, k2, k3, k4, k5, k6, k7 : IO
"""

# component i reads k(2i) and writes k(2i+1)
systems = st.tuples(
    st.lists(st.sampled_from(["relay", "generator"]), min_size=1, max_size=4),
    st.lists(
        st.tuples(
            st.sampled_from(["interleave", "comm", "feedback", "reflexive"]),
            st.integers(0, 3),
            st.integers(0, 3),
            st.integers(0, 3),
        ),
        max_size=4,
    ),
)


def component_script(kinds: list[str]) -> str:
    lines = [SYSTEM_HEADER]
    for i, kind in enumerate(kinds):
        source, target = f"k{2 * i}", f"k{2 * i + 1}"
        if kind == "relay":
            body = f"{source}.in?x -> {target}.out!x -> P{i}"
        else:
            body = f"{target}.out.v.1 -> {source}.in?x -> P{i}"
        lines.append(f"P{i} = {body}")
        lines.append(f"contract C{i} {{ behaviour P{i}; channel {source} : IO; channel {target} : IO; }}")
    return "\n".join(lines) + "\n"


def free_channels(contract, outputs: bool) -> list[str]:
    return [ch for ch in contract.channels if int(ch[1:]) % 2 == outputs]


def build_system(service, count: int, steps):
    """Applies the composition steps whose side conditions hold, then interleaves what is left"""
    parts = [service.contract(f"C{i}") for i in range(count)]
    for op, i, j, k in steps:
        first = i % len(parts)
        p = parts[first]
        try:
            if op in ("interleave", "comm"):
                if len(parts) < 2:
                    continue
                second = j % len(parts)
                if second == first:
                    second = (first + 1) % len(parts)
                q = parts[second]
                if op == "interleave":
                    made = service.compose_interleave(p, q)
                else:
                    outs, ins = free_channels(p, True), free_channels(q, False)
                    if not outs or not ins:
                        continue
                    made = service.compose_communication(p, outs[k % len(outs)], q, ins[k % len(ins)])
                parts = [r for n, r in enumerate(parts) if n not in (first, second)] + [made]
            else:
                outs, ins = free_channels(p, True), free_channels(p, False)
                if not outs or not ins:
                    continue
                compose = service.compose_feedback if op == "feedback" else service.compose_reflexive
                made = compose(p, outs[k % len(outs)], ins[k % len(ins)])
                parts = [r for n, r in enumerate(parts) if n != first] + [made]
        except (SideConditionFailed, NotDecoupled, DeadlockIntroduced):
            continue
    return reduce(service.compose_interleave, parts)


def deadlock_free(service, contract) -> bool:
    return check_deadlock_free(service.models.norm(contract.behaviour, True, contract.definitions)).passed


@pytest.mark.slow
class TestCompositionProperties:

    @examples(200)
    @given(systems)
    def test_generated_systems_deadlock_free(self, system):
        """Test compositions built under their side conditions never deadlock"""
        kinds, steps = system
        service = ContractService(parse_spec(component_script(kinds)))

        assert deadlock_free(service, build_system(service, len(kinds), steps))

    @examples(200)
    @given(io_pairs)
    def test_relation_hierarchy(self, shapes):
        """Test refinement implies inheritance by convergence, which implies the extended one"""
        service = ContractService(parse_spec(io_script(*shapes)))
        t, t_prime = service.contract("Ctr_A"), service.contract("Ctr_B")

        refined = service.check_bric_refinement(t, t_prime).passed
        by_cvg = service.check_inheritance(t, t_prime, Relation.CVG).passed
        by_ecvg = service.check_inheritance(t, t_prime, Relation.ECVG).passed

        assert by_cvg or not refined
        assert by_ecvg or not by_cvg

    @examples(100)
    @given(io_pairs)
    def test_inheritance_keeps_deadlock_freedom(self, shapes):
        """Test an inheriting contract is deadlock free when its parent is"""
        service = ContractService(parse_spec(io_script(*shapes)))
        t, t_prime = service.contract("Ctr_A"), service.contract("Ctr_B")

        if deadlock_free(service, t) and service.check_inheritance(t, t_prime, Relation.ECVG).passed:
            assert deadlock_free(service, t_prime)

    @examples(100)
    @given(io_pairs)
    def test_substitution_keeps_deadlock_freedom(self, shapes):
        """Test swapping a contract for an heir inside a communication keeps the system deadlock free"""
        service = ContractService(parse_spec(io_script(*shapes)))
        t, t_prime, sink = (service.contract(n) for n in ("Ctr_A", "Ctr_B", "Ctr_SINK"))
        system = service.compose_communication(t, "d", sink, "z")

        if deadlock_free(service, system) and service.check_inheritance(t, t_prime, Relation.ECVG).passed:
            assert deadlock_free(service, service.compose_communication(t_prime, "d", sink, "z"))


class TestBufferProperties:

    @pytest.mark.parametrize("capacity", [1, 2, 3])
    def test_fifo(self, contract_spec, capacity):
        """Test each direction delivers what it took, in order, holding at most its capacity"""
        forward = dict(io_renaming(contract_spec, "b", "d"))
        backward = dict(io_renaming(contract_spec, "d", "b"))
        definitions, root = make_buffer(BufferSpec(capacity, tuple(forward.items()), tuple(backward.items())))
        buffer = ModelCache(contract_spec).norm(root, False, definitions)

        for trace in traces_upto(buffer, 2 * capacity + 2):
            for mapping in (forward, backward):
                taken = [mapping[e] for e in trace if e in mapping]
                given_out = [e for e in trace if e in mapping.values()]
                assert given_out == taken[: len(given_out)]
                assert len(taken) - len(given_out) <= capacity

    @pytest.mark.parametrize("capacity", [1, 2])
    def test_pending_output_offered(self, contract_spec, capacity):
        """Test a non-empty direction always offers its oldest item"""
        forward = dict(io_renaming(contract_spec, "b", "d"))
        definitions, root = make_buffer(BufferSpec(capacity, tuple(forward.items()), ()))
        buffer = ModelCache(contract_spec).norm(root, False, definitions)

        for trace in traces_upto(buffer, 2 * capacity):
            taken = [forward[e] for e in trace if e in forward]
            given_out = [e for e in trace if e in forward.values()]
            if len(taken) > len(given_out):
                head = taken[len(given_out)]
                state = walk_model(buffer, trace)
                assert all(head in acceptance for acceptance in buffer.acceptances(state))
