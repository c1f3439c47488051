import logging
import threading
from collections import deque
from dataclasses import replace
from typing import Iterable

import networkx as nx

from src.app.entities import (
    TICK,
    BufferSpec,
    CheckOptions,
    Contract,
    ContractDenotation,
    Counterexample,
    Direction,
    Event,
    Interface,
    Lts,
    NormLts,
    Relation,
    Trace,
    Verdict,
    flatten,
    format_trace,
)
from src.app.printer import format_expr
from src.app.services.expr_service import Evaluator
from src.app.services.failures_service import (
    check_deadlock_free,
    check_failures_equivalence,
    check_failures_refinement,
)
from src.app.services.io_process_service import check_io_process
from src.app.services.lts_service import (
    ModelCache,
    _divergent_states,
    interleave_norm,
    normalize,
    project,
)
from src.app.services.convergence_service import check_cvg, check_ecvg
from src.app.syntax import (
    Call,
    ContractDecl,
    ExtChoice,
    Interleave,
    Lit,
    Name,
    Node,
    ParSync,
    Prefix,
    ProcessDef,
    Ref,
    Spec,
    Stop,
)
from src.exceptions import (
    ChannelClash,
    DeadlockIntroduced,
    InvalidContract,
    NotDecoupled,
    SideConditionFailed,
    TypeMismatch,
    UnboundName,
)

logger = logging.getLogger(__name__)

CONFLUENCE_UNCHECKED = "I/O confluence UNCHECKED"


# ---------- Helpers ----------


def _merge(*groups: Iterable[ProcessDef]) -> tuple[ProcessDef, ...]:
    merged: dict[str, ProcessDef] = {}
    for group in groups:
        for definition in group:
            merged.setdefault(definition.name, definition)
    return tuple(merged.values())


def _traces(norm: NormLts) -> dict[int, Trace]:
    """Shortest trace to every reachable state."""
    found = {norm.root: ()}
    queue = deque([norm.root])
    while queue:
        state = queue.popleft()
        for event, target in norm.successors[state]:
            if target not in found:
                found[target] = found[state] + (event,)
                queue.append(target)
    return found


def _fail(detail: str, trace: Trace = (), event: Event | None = None, explored: int = 0) -> Verdict:
    return Verdict.fail(Counterexample(trace, event=event, detail=detail), explored)


def _witness(verdict: Verdict) -> str:
    if verdict.counterexample is None:
        return ""
    return "; ".join(verdict.counterexample.render())


def check_fop(proj: NormLts) -> Verdict:
    """A process is free of output loops when no cycle consists of outputs only."""
    graph = nx.DiGraph()
    graph.add_nodes_from(range(proj.n_states))
    for source in range(proj.n_states):
        for event, target in proj.successors[source]:
            if event.direction is Direction.OUT:
                graph.add_edge(source, target, event=event)

    reached = _traces(proj)
    for component in nx.strongly_connected_components(graph):
        looping = len(component) > 1 or any(graph.has_edge(s, s) for s in component)
        entries = [s for s in component if s in reached]
        if not looping or not entries:
            continue
        start = min(entries, key=lambda s: len(reached[s]))
        cycle = nx.find_cycle(graph, source=start)
        loop = [graph.edges[u, v]["event"] for u, v in cycle]
        return _fail(f"outputs {format_trace(loop)} can repeat forever", reached[start], explored=proj.n_states)
    return Verdict.ok(proj.n_states)


def check_normal_form(expr: Node) -> bool:
    """Whether ``expr`` is a contract built only by the four safe composition rules."""
    match expr:
        case Name():
            return True
        case Call(name="interleave", args=(left, right)):
            return check_normal_form(left) and check_normal_form(right)
        case Call(name="comm", args=(left, Name(), right, Name(), *rest)) if len(rest) <= 1:
            return check_normal_form(left) and check_normal_form(right)
        case Call(name="feedback" | "reflexive", args=(inner, Name(), Name(), *rest)) if len(rest) <= 1:
            return check_normal_form(inner)
    return False


# ---------- Buffers ----------


def io_renaming(spec: Spec, source: str, target: str) -> tuple[tuple[Event, Event], ...]:
    """Pairs ``source.out.x`` with ``target.in.x`` for every ``x`` both channels carry."""
    inputs = {e.value: e for e in spec.catalogue.channel_events(target) if e.direction is Direction.IN}
    return tuple(
        (e, inputs[e.value])
        for e in spec.catalogue.channel_events(source)
        if e.direction is Direction.OUT and e.value in inputs
    )


def _fifo(mapping: tuple[tuple[Event, Event], ...], capacity: int) -> tuple[tuple[ProcessDef, ...], Node]:
    if not mapping:
        return (), Stop()

    source, target = mapping[0][0].channel, mapping[0][1].channel
    definitions: dict[str, ProcessDef] = {}

    def name(queue: tuple[int, ...]) -> str:
        return f"BUFF_{source}_{target}_{capacity}_q" + "_".join(str(i) for i in queue)

    pending = [()]
    while pending:
        queue = pending.pop()
        if name(queue) in definitions:
            continue
        options: list[Node] = []
        if len(queue) < capacity:
            for index, (consumed, _) in enumerate(mapping):
                options.append(Prefix(Lit(consumed), Ref(name(queue + (index,)))))
                pending.append(queue + (index,))
        if queue:
            options.append(Prefix(Lit(mapping[queue[0]][1]), Ref(name(queue[1:]))))
            pending.append(queue[1:])

        body = options[0]
        for option in options[1:]:
            body = ExtChoice(body, option)
        definitions[name(queue)] = ProcessDef(name(queue), (), body)

    return tuple(definitions.values()), Ref(name(()))


def make_buffer(buffer: BufferSpec) -> tuple[tuple[ProcessDef, ...], Node]:
    """Two bounded FIFO cells, one per direction, running side by side."""
    left_defs, left = _fifo(buffer.l_map, buffer.capacity)
    right_defs, right = _fifo(buffer.r_map, buffer.capacity)
    return _merge(left_defs, right_defs), Interleave(left, right)


# ---------- Contracts ----------


class ContractService:
    """Builds, composes and compares the contracts declared in one spec."""

    def __init__(self, spec: Spec, options: CheckOptions | None = None, models: ModelCache | None = None):
        self.spec = spec
        self.options = options or CheckOptions()
        self.models = models or ModelCache(spec, self.options.max_states)
        self._evaluator = Evaluator(spec)
        self._lock = threading.Lock()
        self._contracts: dict[str, Contract] = {}
        self._denotations: dict[tuple, ContractDenotation] = {}

    # ---------- construction ----------

    def interface(self, node: Node) -> Interface:
        if isinstance(node, Name) and node.id in self.spec.types:
            return Interface(node.id, self.spec.types[node.id].members)
        values = frozenset(
            item.payload if isinstance(item, Event) else flatten(item)
            for item in self._evaluator.set_value(node)
        )
        return Interface(format_expr(node), values)

    def contract_from_decl(self, decl: ContractDecl) -> Contract:
        if decl.behaviour is None:
            raise InvalidContract(f"contract {decl.name} has no behaviour")
        r_map = {channel: self.interface(iface) for channel, iface in decl.channels}
        contract = Contract(decl.name, decl.behaviour, tuple(r_map), r_map)
        self.validate_contract(contract)
        return contract

    def contract(self, name: str) -> Contract:
        with self._lock:
            cached = self._contracts.get(name)
        if cached is not None:
            return cached

        decl = self.spec.contracts.get(name)
        if decl is None:
            raise UnboundName(f"contract {name} is not declared")
        if decl.composition is not None:
            contract = self.evaluate(decl.composition, name)
        else:
            contract = self.contract_from_decl(decl)
        with self._lock:
            return self._contracts.setdefault(name, contract)

    def evaluate(self, expr: Node, name: str | None = None) -> Contract:
        """The contract a composition expression denotes."""
        match expr:
            case Name(id=ident):
                contract = self.contract(ident)
            case Call(name="interleave", args=(left, right)):
                contract = self.compose_interleave(self.evaluate(left), self.evaluate(right))
            case Call(name="comm", args=(left, Name(id=c), right, Name(id=z), *rest)):
                contract = self.compose_communication(
                    self.evaluate(left), c, self.evaluate(right), z, self._capacity(rest)
                )
            case Call(name="feedback", args=(inner, Name(id=c), Name(id=z), *rest)):
                contract = self.compose_feedback(self.evaluate(inner), c, z, self._capacity(rest))
            case Call(name="reflexive", args=(inner, Name(id=c), Name(id=z), *rest)):
                contract = self.compose_reflexive(self.evaluate(inner), c, z, self._capacity(rest))
            case _:
                raise TypeMismatch(f"{format_expr(expr)} is not a contract expression")
        if name is not None and name != contract.name:
            contract = replace(contract, name=name)
        return contract

    def _capacity(self, rest) -> int:
        if not rest:
            return self.options.buffer_size
        return self._evaluator.integer(rest[0])

    def validate_contract(self, ctr: Contract) -> None:
        lts = self.models.lts(ctr.behaviour, ctr.definitions)
        stray = sorted({e.channel for e in lts.alphabet if not e.is_marker} - set(ctr.channels))
        if stray:
            raise InvalidContract(f"contract {ctr.name} uses channels outside its channel set: {', '.join(stray)}")
        unknown = [c for c in ctr.channels if c not in self.spec.channels]
        if unknown:
            raise InvalidContract(f"contract {ctr.name} maps undeclared channels: {', '.join(unknown)}")
        if not ctr.atomic:
            return
        report = check_io_process(lts, self.spec.channels)
        failure = report.first_failure()
        if failure is not None:
            number, verdict = failure
            raise InvalidContract(
                f"behaviour of {ctr.name} is not an I/O process, condition {number} fails: {_witness(verdict)}"
            )

    # ---------- semantics ----------

    def _lts(self, ctr: Contract) -> Lts:
        return self.models.lts(ctr.behaviour, ctr.definitions)

    def contract_semantics(self, ctr: Contract) -> ContractDenotation:
        key = (ctr.behaviour, ctr.definitions, tuple(sorted(ctr.r_map.items(), key=lambda i: i[0])))
        with self._lock:
            cached = self._denotations.get(key)
        if cached is not None:
            return cached

        lts = self._lts(ctr)
        overall = self.models.norm(ctr.behaviour, False, ctr.definitions)
        per_channel = {}
        for channel in ctr.channels:
            events = ctr.r_map[channel].events_on(self.spec.channels[channel])
            projected = project(lts, {channel}, only=events)
            if _divergent_states(projected):
                logger.warning("%s restricted to %s diverges; keeping its stable failures", ctr.name, channel)
            per_channel[channel] = normalize(projected, True, self.options.max_states)

        denotation = ContractDenotation(overall, per_channel)
        with self._lock:
            return self._denotations.setdefault(key, denotation)

    # ---------- composition ----------

    def buffer_for(self, c: str, z: str, capacity: int) -> BufferSpec:
        return BufferSpec(capacity, io_renaming(self.spec, c, z), io_renaming(self.spec, z, c))

    def _sync(self, *channels: str) -> Lit:
        return Lit(frozenset(e for c in channels for e in self.spec.catalogue.channel_events(c)))

    def compose_binary(
        self, p: Contract, c: str | None, q: Contract, z: str | None, capacity: int | None = None
    ) -> Contract:
        """Joins two contracts, hooking ``c`` of ``p`` to ``z`` of ``q`` through a buffer when given."""
        clash = sorted(set(p.channels) & set(q.channels))
        if clash:
            raise ChannelClash(f"{p.name} and {q.name} both own {', '.join(clash)}")

        if c is None or z is None:
            behaviour: Node = Interleave(p.behaviour, q.behaviour)
            hooked: set[str] = set()
            definitions = _merge(p.definitions, q.definitions)
            name = f"({p.name} ||| {q.name})"
        else:
            if c not in p.channels or z not in q.channels:
                raise InvalidContract(f"cannot hook {p.name}.{c} to {q.name}.{z}: channel not owned")
            buffer_defs, buffer = make_buffer(self.buffer_for(c, z, capacity or self.options.buffer_size))
            behaviour = ParSync(ParSync(p.behaviour, self._sync(c), buffer), self._sync(z), q.behaviour)
            hooked = {c, z}
            definitions = _merge(p.definitions, q.definitions, buffer_defs)
            name = f"({p.name} <{c}|{z}> {q.name})"

        channels = tuple(ch for ch in p.channels + q.channels if ch not in hooked)
        r_map = {ch: i for ch, i in {**p.r_map, **q.r_map}.items() if ch not in hooked}
        return Contract(name, behaviour, channels, r_map, definitions, False, p.notes + q.notes)

    def compose_unary(self, p: Contract, c: str, z: str, capacity: int | None = None) -> Contract:
        """Hooks two channels of one contract to each other through a buffer."""
        if c not in p.channels or z not in p.channels:
            raise InvalidContract(f"cannot hook {c} to {z}: {p.name} owns {', '.join(p.channels)}")
        buffer_defs, buffer = make_buffer(self.buffer_for(c, z, capacity or self.options.buffer_size))
        return Contract(
            f"({p.name} <{c}|{z}>)",
            ParSync(p.behaviour, self._sync(c, z), buffer),
            tuple(ch for ch in p.channels if ch not in (c, z)),
            {ch: i for ch, i in p.r_map.items() if ch not in (c, z)},
            _merge(p.definitions, buffer_defs),
            False,
            p.notes,
        )

    def compose_interleave(self, p: Contract, q: Contract) -> Contract:
        return self.compose_binary(p, None, q, None)

    def _require_side_conditions(self, p: Contract, ic: str, q: Contract, oc: str) -> None:
        compat = self.check_strong_compat(p, ic, q, oc)
        if not compat.passed:
            raise SideConditionFailed(f"strong compatibility of {ic} and {oc} fails: {_witness(compat)}")
        for side in {p.name: p, q.name: q}.values():
            fop = check_fop(self.contract_semantics(side).overall)
            if not fop.passed:
                raise SideConditionFailed(f"{side.name} may output forever: {_witness(fop)}")

    def compose_communication(
        self, p: Contract, ic: str, q: Contract, oc: str, capacity: int | None = None
    ) -> Contract:
        if ic not in p.channels or oc not in q.channels:
            raise InvalidContract(f"cannot hook {p.name}.{ic} to {q.name}.{oc}: channel not owned")

        self._require_side_conditions(p, ic, q, oc)

        logger.info("composing %s and %s over %s/%s; %s", p.name, q.name, ic, oc, CONFLUENCE_UNCHECKED)
        result = self.compose_binary(p, ic, q, oc, capacity)
        return _with_note(result, CONFLUENCE_UNCHECKED)

    def compose_feedback(self, p: Contract, ic: str, oc: str, capacity: int | None = None) -> Contract:
        if ic not in p.channels or oc not in p.channels:
            raise InvalidContract(f"cannot hook {p.name}.{ic} to {p.name}.{oc}: channel not owned")
        decoupled = self.check_decoupled(p.behaviour, ic, oc, p.definitions)
        if not decoupled.passed:
            raise NotDecoupled(f"{ic} and {oc} are coupled in {p.name}: {_witness(decoupled)}")
        self._require_side_conditions(p, ic, p, oc)
        return _with_note(self.compose_unary(p, ic, oc, capacity), CONFLUENCE_UNCHECKED)

    def compose_reflexive(self, p: Contract, ic: str, oc: str, capacity: int | None = None) -> Contract:
        result = self.compose_unary(p, ic, oc, capacity)
        verdict = check_deadlock_free(self.models.norm(result.behaviour, True, result.definitions))
        if not verdict.passed:
            raise DeadlockIntroduced(f"hooking {ic} to {oc} in {p.name} deadlocks: {_witness(verdict)}")
        return result

    # ---------- side conditions ----------

    def check_decoupled(
        self, b: Node, c: str, z: str, definitions: tuple[ProcessDef, ...] = ()
    ) -> Verdict:
        """``c`` and ``z`` are decoupled when their joint view is the interleaving of the single views."""
        lts = self.models.lts(b, definitions)
        joint = normalize(project(lts, {c, z}), True, self.options.max_states)
        on_c = normalize(project(lts, {c}), True, self.options.max_states)
        on_z = normalize(project(lts, {z}), True, self.options.max_states)
        return check_failures_equivalence(joint, interleave_norm(on_c, on_z))

    def check_strong_compat(self, p: Contract, c: str, q: Contract, z: str) -> Verdict:
        """Every output one side can make on the hooked channels is an input the other side offers."""
        left = self.contract_semantics(p).per_channel[c]
        right = self.contract_semantics(q).per_channel[z]
        to_right = dict(io_renaming(self.spec, c, z))
        to_left = dict(io_renaming(self.spec, z, c))

        seen = {(left.root, right.root)}
        queue: deque[tuple[int, int, Trace]] = deque([(left.root, right.root, ())])
        while queue:
            sl, sr, trace = queue.popleft()
            offers_l, offers_r = set(left.initials(sl)), set(right.initials(sr))
            moves = []
            for producer, consumer, offers, mapping, name in (
                (left, right, offers_r, to_right, q.name),
                (right, left, offers_l, to_left, p.name),
            ):
                state_p, state_c = (sl, sr) if producer is left else (sr, sl)
                for output in producer.initials(state_p):
                    if output.direction is not Direction.OUT:
                        continue
                    mapped = mapping.get(output)
                    if mapped is None or mapped not in offers:
                        missing = f"{mapped} not offered" if mapped else "no matching input"
                        return _fail(f"{output} is not consumed by {name}: {missing}", trace, output, len(seen))
                    next_p, next_c = producer.after(state_p, output), consumer.after(state_c, mapped)
                    pair = (next_p, next_c) if producer is left else (next_c, next_p)
                    moves.append((pair, (output, mapped)))
            for pair, step in moves:
                if pair not in seen:
                    seen.add(pair)
                    queue.append((*pair, trace + step))

        logger.debug("%s.%s and %s.%s are strongly compatible over %d pairs", p.name, c, q.name, z, len(seen))
        return Verdict.ok(len(seen))

    # ---------- congruences ----------

    def check_default_congruence(self, t_prime: Contract, t: Contract, c: str) -> Verdict:
        return check_failures_refinement(
            self.contract_semantics(t).per_channel[c], self.contract_semantics(t_prime).per_channel[c]
        )

    def check_input_congruence(self, t_prime: Contract, t: Contract, c: str) -> Verdict:
        """Where ``t`` refuses every input, ``t_prime`` may only accept inputs on ``c`` that ``t`` never uses."""
        new = self.contract_semantics(t_prime).overall
        old = self.contract_semantics(t).overall
        sigma = new.universe | old.universe | {TICK}
        inputs = frozenset(e for e in sigma if e.direction is Direction.IN)
        c_in = frozenset(e for e in inputs if e.channel == c)
        fresh = new.alphabet - old.alphabet

        seen = {(new.root, old.root)}
        queue: deque[tuple[int, int, Trace]] = deque([(new.root, old.root, ())])
        while queue:
            sn, so, trace = queue.popleft()
            for accepted in new.acceptances(sn):
                refused = sigma - accepted
                for old_accepted in old.acceptances(so):
                    old_refused = sigma - old_accepted
                    clause_all = not inputs <= old_refused or c_in < refused
                    clause_c = not c_in <= old_refused or (c_in - fresh) < refused
                    if not (clause_all or clause_c):
                        witness = Counterexample(
                            trace,
                            refusal=refused,
                            detail=f"inputs on {c} are accepted where the original refuses every input",
                        )
                        return Verdict.fail(witness, len(seen))
            for event in new.initials(sn):
                target = old.after(so, event)
                if target is None:
                    continue
                pair = (new.after(sn, event), target)
                if pair not in seen:
                    seen.add(pair)
                    queue.append((*pair, trace + (event,)))
        return Verdict.ok(len(seen))

    # ---------- relations ----------

    def _r_inclusion(self, t: Contract, t_prime: Contract) -> Verdict:
        for channel in t.channels:
            mine = t.r_map[channel]
            theirs = t_prime.r_map.get(channel)
            if theirs is None:
                return _fail(f"{t_prime.name} has no channel {channel}")
            if not mine.values <= theirs.values:
                return _fail(f"interface {mine.name} of {channel} is not included in {theirs.name}")
        return Verdict.ok()

    def check_bric_refinement(self, t: Contract, t_prime: Contract) -> Verdict:
        if set(t.channels) != set(t_prime.channels):
            added = sorted(set(t_prime.channels) - set(t.channels))
            dropped = sorted(set(t.channels) - set(t_prime.channels))
            return _fail(f"channel sets differ: added {added}, dropped {dropped}")
        included = self._r_inclusion(t, t_prime)
        if not included.passed:
            return included
        behaviour = check_failures_refinement(
            self.contract_semantics(t).overall, self.contract_semantics(t_prime).overall
        )
        if not behaviour.passed:
            return Verdict.fail(behaviour.counterexample, behaviour.stats.states_explored, ("behaviour",))
        return Verdict.ok(behaviour.stats.states_explored, ("channels equal", "interfaces included", "behaviour"))

    def check_inheritance(
        self, t: Contract, t_prime: Contract, mode: Relation, options: CheckOptions | None = None
    ) -> Verdict:
        """Whether ``t_prime`` inherits from ``t`` by (extended) convergence."""
        options = options or self.options
        included = self._r_inclusion(t, t_prime)
        if not included.passed:
            return included

        check = check_cvg if mode is Relation.CVG else check_ecvg
        behaviour = check(
            self.contract_semantics(t).overall, self.contract_semantics(t_prime).overall, options=options
        )
        notes = [f"behaviour {mode.value} by {behaviour.method.value}", *behaviour.notes]
        if not behaviour.passed:
            return Verdict.fail(behaviour.counterexample, behaviour.stats.states_explored, tuple(notes))

        for channel in t.channels:
            if self.check_default_congruence(t_prime, t, channel).passed:
                notes.append(f"{channel}: default congruence")
                continue
            congruent = self.check_input_congruence(t_prime, t, channel)
            if not congruent.passed:
                return Verdict.fail(
                    congruent.counterexample,
                    congruent.stats.states_explored,
                    (*notes, f"{channel}: neither congruence holds"),
                )
            notes.append(f"{channel}: input congruence")

        logger.info("%s inherits from %s by %s", t_prime.name, t.name, mode.value)
        return Verdict.ok(behaviour.stats.states_explored, tuple(notes))


def _with_note(ctr: Contract, note: str) -> Contract:
    if note in ctr.notes:
        return ctr
    return replace(ctr, notes=ctr.notes + (note,))

