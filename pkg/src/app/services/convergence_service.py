import logging
import time
from collections import deque
from functools import cache, reduce
from typing import Iterable

from src.app.entities import (
    END,
    IN_ACK,
    IN_RDT,
    MARKERS,
    TICK,
    CheckOptions,
    ConvergenceVerdict,
    Counterexample,
    Direction,
    Event,
    EventCatalogue,
    FailuresModel,
    GlbConfig,
    Lts,
    Method,
    NormLts,
    Relation,
    SerialProcess,
    Stats,
    Status,
    Trace,
    canonical,
    format_trace,
    walk_model,
)
from src.app.services.failures_service import check_failures_refinement
from src.app.services.io_process_service import branch_span, depth, serialize
from src.app.services.lts_service import DEFAULT_MAX_STATES, LazyNormalForm, TermSemantics, compile
from src.app.syntax import (
    ExtChoice,
    Hide,
    IntChoice,
    Lit,
    Node,
    ParSync,
    Prefix,
    ProcessDef,
    Ref,
    Seq,
    Skip,
    Spec,
    Stop,
)
from src.exceptions import BoundTooSmall, NotSubset, SerialShape

logger = logging.getLogger(__name__)

GAP_TOO_SMALL = "E_GAP_TOO_SMALL"

Events = frozenset[Event]


def _fold(make, options: list[Node]) -> Node:
    if not options:
        return Stop()
    return reduce(make, options)


# ---------- Helper processes ----------


class GlbBuilder:
    """Generates the process definitions of the greatest lower bounds.

    Each helper instance becomes one parameterless definition, so a term
    shared by several builder states is compiled once.
    """

    def __init__(self, prefix: str = "GLB"):
        self._prefix = prefix
        self._definitions: dict[str, ProcessDef | None] = {}
        self._set_ids: dict[Events, int] = {}

    @property
    def definitions(self) -> tuple[ProcessDef, ...]:
        return tuple(d for d in self._definitions.values() if d is not None)

    def _name(self, kind: str, *parts) -> str:
        tags = [str(self._set_ids.setdefault(p, len(self._set_ids))) if isinstance(p, frozenset) else str(p) for p in parts]
        return "_".join([self._prefix, kind, *tags])

    def _define(self, name: str, body) -> Ref:
        if name not in self._definitions:
            self._definitions[name] = None
            self._definitions[name] = ProcessDef(name, (), body())
        return Ref(name)

    def exec(self, evs: Events, n: int) -> Node:
        """Up to ``n`` events of ``evs``, each chosen internally."""
        if n <= 0 or not evs:
            return Skip()

        def body():
            rest = self.exec(evs, n - 1)
            return _fold(IntChoice, [IntChoice(Prefix(Lit(x), rest), rest) for x in canonical(evs)])

        return self._define(self._name("EXEC", frozenset(evs), n), body)

    def exec_d(self, evs: Events, n: int) -> Node:
        """Up to ``n`` events of ``evs``, each chosen by the environment."""
        if n <= 0 or not evs:
            return Skip()

        def body():
            rest = self.exec_d(evs, n - 1)
            return _fold(ExtChoice, [ExtChoice(Prefix(Lit(x), rest), rest) for x in canonical(evs)])

        return self._define(self._name("EXEC_D", frozenset(evs), n), body)

    def exec_q(self, evs1: Events, evs2: Events, n: int, acknowledged: bool = False) -> Node:
        """New inputs ``evs1 - evs2`` gated internally, expected ones left external."""
        if not evs2 <= evs1:
            missing = ", ".join(str(e) for e in canonical(evs2 - evs1))
            raise NotSubset(f"expected events {{{missing}}} are not among the gated set")
        gated = frozenset(evs1 - evs2)
        internal = self.exec_ack(gated, n) if acknowledged else self.exec(gated, n)
        return ParSync(internal, Lit(gated), self.exec_d(frozenset(evs1), n))

    def exec_ack(self, evs: Events, n: int) -> Node:
        """``exec`` that communicates ``in_ack`` after every event."""
        if n <= 0 or not evs:
            return Skip()

        def body():
            rest = self.exec_ack(evs, n - 1)
            return _fold(
                IntChoice, [IntChoice(Prefix(Lit(x), Prefix(Lit(IN_ACK), rest)), rest) for x in canonical(evs)]
            )

        return self._define(self._name("EXEC_ACK", frozenset(evs), n), body)

    @staticmethod
    def aft_in() -> Node:
        return ExtChoice(Prefix(Lit(IN_ACK), Prefix(Lit(IN_RDT), Skip())), Skip())

    def exec_after_in(self, evs: Events, n: int) -> Node:
        return ExtChoice(Prefix(Lit(IN_RDT), self.exec_ack(evs, n)), Skip())

    def _watched(self, first: Node, evs3: Events, evs2: Events, n: int) -> Node:
        watched = ParSync(first, Lit(frozenset({IN_ACK})), self.aft_in())
        return ParSync(watched, Lit(frozenset({IN_RDT})), self.exec_after_in(frozenset(evs3 - evs2), n))

    def exec_q_aft(self, evs1: Events, evs2: Events, evs3: Events, n: int) -> Node:
        return self._watched(self.exec_q(evs1, evs2, 1, acknowledged=True), evs3, evs2, n)

    def exec_aft(self, evs1: Events, evs2: Events, evs3: Events, n: int) -> Node:
        return self._watched(self.exec_ack(evs1, 1), evs3, evs2, n)

    # ---------- builders ----------

    def builder(self, sp: SerialProcess, cfg: GlbConfig, extended: bool) -> Node:
        entries = sp.entries
        kind = "ECVG_BUILDER" if extended else "CVG_BUILDER"
        root = self._name(kind, 0, len(entries))

        def state(start: int, stop: int) -> Node:
            if start >= stop:
                return Stop()
            head = entries[start]
            if head.ev == END:
                return Ref(root)

            def body():
                offered = frozenset(head.a_ev)
                prefixes = []
                for x in head.a_ev:
                    child = branch_span(entries, x, start + 1, stop, head.level + 1)
                    prefixes.append(Prefix(Lit(x), state(*child)))

                if offered <= cfg.inputs:
                    if extended:
                        gated = self.exec_q_aft(cfg.inputs, offered, cfg.all_events, cfg.gap - 1)
                    else:
                        gated = self.exec_q(cfg.inputs, offered, cfg.gap)
                    return IntChoice(Seq(gated, Ref(name)), _fold(ExtChoice, prefixes))

                if extended:
                    before = self.exec_aft(cfg.inputs, offered, cfg.all_events, cfg.gap - 1)
                else:
                    before = self.exec(cfg.inputs, cfg.gap)
                return Seq(before, _fold(IntChoice, prefixes))

            name = self._name(kind, start, stop)
            return self._define(name, body)

        return state(0, len(entries))


def glb_cvg_process(sp: SerialProcess, cfg: GlbConfig) -> tuple[tuple[ProcessDef, ...], Node]:
    """Definitions and root expression of the convergence lower bound."""
    builder = GlbBuilder("GLB_CVG")
    root = Hide(builder.builder(sp, cfg, extended=False), Lit(frozenset({END})))
    logger.debug("generated %d definitions for GLB_CVG", len(builder.definitions))
    return builder.definitions, root


def glb_ecvg_process(sp: SerialProcess, cfg: GlbConfig) -> tuple[tuple[ProcessDef, ...], Node]:
    """Definitions and root expression of the extended convergence lower bound."""
    builder = GlbBuilder("GLB_ECVG")
    root = Hide(builder.builder(sp, cfg, extended=True), Lit(MARKERS))
    logger.debug("generated %d definitions for GLB_ECVG", len(builder.definitions))
    return builder.definitions, root


def glb_spec(definitions: Iterable[ProcessDef], universe: Iterable[Event]) -> Spec:
    return Spec(
        processes={d.name: d for d in definitions},
        catalogue=EventCatalogue.from_events(universe),
    )


def build_glb_cvg(
    sp: SerialProcess, cfg: GlbConfig, max_states: int = DEFAULT_MAX_STATES, universe: Events | None = None
) -> Lts:
    definitions, root = glb_cvg_process(sp, cfg)
    return compile(glb_spec(definitions, universe or cfg.all_events), root, max_states)


def build_glb_ecvg(
    sp: SerialProcess, cfg: GlbConfig, max_states: int = DEFAULT_MAX_STATES, universe: Events | None = None
) -> Lts:
    definitions, root = glb_ecvg_process(sp, cfg)
    return compile(glb_spec(definitions, universe or cfg.all_events), root, max_states)


# ---------- Trace relations ----------


def _inputs_after(t: FailuresModel, trace: Trace) -> frozenset[Event]:
    state = walk_model(t, trace)
    return frozenset(e for e in t.initials(state) if e.direction is Direction.IN)


def _offers_after(t: FailuresModel, trace: Trace) -> frozenset[Event]:
    return frozenset(t.initials(walk_model(t, trace)))


def oracle_cvg_traces(t: FailuresModel, t_prime: FailuresModel, trace_a: Trace, trace_b: Trace) -> bool:
    """``trace_a`` of ``t_prime`` differs from ``trace_b`` of ``t`` only by new-in-context inputs."""
    walk_model(t_prime, trace_a)
    walk_model(t, trace_b)

    @cache
    def convergent(a: Trace) -> bool:
        if a == trace_b:
            return True
        if len(a) <= len(trace_b):
            return False
        for i, ne in enumerate(a):
            t1 = a[:i]
            if trace_b[:i] != t1:
                break
            if ne.direction is Direction.IN and ne not in _inputs_after(t, t1) and convergent(t1 + a[i + 1 :]):
                return True
        return False

    return convergent(tuple(trace_a))


def oracle_ecvg_traces(t: FailuresModel, t_prime: FailuresModel, trace_a: Trace, trace_b: Trace) -> bool:
    """Like ``oracle_cvg_traces``, also concealing events run after a new-in-context input."""
    walk_model(t_prime, trace_a)
    walk_model(t, trace_b)

    @cache
    def convergent(a: Trace) -> bool:
        if a == trace_b:
            return True
        if len(a) <= len(trace_b):
            return False
        for i, ne in enumerate(a):
            t1 = a[:i]
            if trace_b[:i] != t1:
                break
            if ne.direction is not Direction.IN or ne in _inputs_after(t, t1):
                continue
            offers = _offers_after(t, t1)
            for k in range(i + 1, len(a) + 1):
                if k > i + 1 and a[k - 1] in offers:
                    break
                if convergent(t1 + a[k:]):
                    return True
        return False

    return convergent(tuple(trace_a))


def classify_witness(t: FailuresModel, t_prime: FailuresModel, trace: Iterable[Event]) -> tuple[tuple[Event, bool], ...]:
    """Pairs each event of a ``t_prime`` trace with whether ``t`` does not offer it at that point."""
    state = t.root
    marked = []
    for event in trace:
        following = t.after(state, event) if event != TICK else None
        if following is None:
            marked.append((event, True))
        else:
            marked.append((event, False))
            state = following
    return tuple(marked)


# ---------- Brute force ----------


def _covered(acceptance: frozenset[Event], spec_acceptances, excursion: bool) -> bool:
    mine_in = frozenset(e for e in acceptance if e.direction is Direction.IN)
    mine_out = frozenset(e for e in acceptance if e.direction is Direction.OUT)
    for candidate in spec_acceptances:
        their_in = frozenset(e for e in candidate if e.direction is Direction.IN)
        their_out = frozenset(e for e in candidate if e.direction is Direction.OUT)
        if their_in <= mine_in and mine_out <= their_out:
            return True
        if excursion and not (candidate - {TICK}) & acceptance:
            return True
    return False


def _oracle(
    relation: Relation, t: FailuresModel, t_prime: FailuresModel, bound: int | None = None
) -> ConvergenceVerdict:
    extended = relation is Relation.ECVG
    sigma_tick = t.universe | t_prime.universe | {TICK}
    start = (t_prime.root, t.root, False)
    seen = {start}
    queue: deque[tuple[object, object, bool, Trace]] = deque([(*start, ())])

    def fail(witness: Counterexample) -> ConvergenceVerdict:
        return ConvergenceVerdict(relation, Method.BRUTE_FORCE, Status.FAIL, witness, Stats(len(seen)))

    while queue:
        mine, theirs, excursion, trace = queue.popleft()

        spec_acceptances = t.acceptances(theirs)
        for acceptance in t_prime.acceptances(mine):
            if not _covered(acceptance, spec_acceptances, excursion):
                return fail(
                    Counterexample(
                        trace,
                        refusal=sigma_tick - acceptance,
                        detail="no failure of the original at a convergent trace covers this refusal",
                    )
                )

        for event in canonical(t_prime.initials(mine)):
            following = t.after(theirs, event)
            if following is not None:
                state = (t_prime.after(mine, event), following, False)
            elif event.direction is Direction.IN:
                state = (t_prime.after(mine, event), theirs, extended)
            elif excursion:
                state = (t_prime.after(mine, event), theirs, True)
            else:
                kind = "output" if event.direction is Direction.OUT else "event"
                return fail(
                    Counterexample(
                        trace,
                        event=event,
                        detail=f"{event} is a new-in-context {kind}",
                        tags=("new-in-context",),
                    )
                )
            if state not in seen:
                if bound is not None and len(trace) + 1 > bound:
                    raise BoundTooSmall(
                        f"the product is not closed within traces of length {bound}; "
                        f"open at {format_trace(trace + (event,))}"
                    )
                seen.add(state)
                queue.append((*state, trace + (event,)))

    return ConvergenceVerdict(relation, Method.BRUTE_FORCE, Status.PASS, None, Stats(len(seen)))


def oracle_cvg(t: FailuresModel, t_prime: FailuresModel, bound: int | None = None) -> ConvergenceVerdict:
    """Decides convergence by exploring ``t_prime`` against ``t`` directly."""
    return _oracle(Relation.CVG, t, t_prime, bound)


def oracle_ecvg(t: FailuresModel, t_prime: FailuresModel, bound: int | None = None) -> ConvergenceVerdict:
    return _oracle(Relation.ECVG, t, t_prime, bound)


# ---------- Checks ----------


def _counted(event: Event, new: bool, relation: Relation) -> bool:
    return new and (relation is Relation.ECVG or event.direction is Direction.IN)


def _longest_new_run(marked: tuple[tuple[Event, bool], ...], relation: Relation) -> int:
    longest = run = 0
    for event, new in marked:
        run = run + 1 if _counted(event, new, relation) else 0
        longest = max(longest, run)
    return longest


def _blocked_run(t: NormLts, t_prime: NormLts, trace: Trace, relation: Relation) -> int:
    """Run a refusal witness needs: its trailing new events plus one new event ``t_prime`` offers next."""
    marked = classify_witness(t, t_prime, trace)
    trailing = 0
    for event, new in reversed(marked):
        if not _counted(event, new, relation):
            break
        trailing += 1
    for event in t_prime.initials(walk_model(t_prime, trace)):
        _, new = classify_witness(t, t_prime, trace + (event,))[-1]
        if _counted(event, new, relation):
            return trailing + 1
    return trailing


def _check(
    relation: Relation,
    t: NormLts,
    t_prime: NormLts,
    cfg: GlbConfig | None,
    options: CheckOptions | None,
) -> ConvergenceVerdict:
    options = options or CheckOptions()
    started = time.perf_counter()

    def finish(verdict: ConvergenceVerdict, *notes: str, gap_limited: bool = False) -> ConvergenceVerdict:
        elapsed = time.perf_counter() - started
        return ConvergenceVerdict(
            verdict.relation,
            verdict.method,
            verdict.status,
            verdict.counterexample,
            Stats(verdict.stats.states_explored, elapsed),
            verdict.notes + notes,
            gap_limited,
        )

    if options.oracle:
        return finish(_oracle(relation, t, t_prime), "brute force requested")

    try:
        sp = serialize(t)
        if cfg is None:
            gap = options.gap if options.gap is not None else max(0, depth(t_prime) - sp.source_depth)
            cfg = GlbConfig(gap, sp.inputs, sp.inputs | sp.outputs)
    except SerialShape as e:
        logger.info("%s: %s; switching to brute force", relation.value, e.message)
        return finish(_oracle(relation, t, t_prime), f"{e.code}: {e.message}")

    if relation is Relation.CVG:
        definitions, root = glb_cvg_process(sp, cfg)
    else:
        definitions, root = glb_ecvg_process(sp, cfg)
    semantics = TermSemantics(glb_spec(definitions, t.universe), options.max_states)
    glb = LazyNormalForm(semantics, root, tolerate_divergence=True)
    refinement = check_failures_refinement(glb, t_prime)
    logger.info(
        "%s by refinement with gap %d: %s over %d pairs",
        relation.value,
        cfg.gap,
        refinement.status.value,
        refinement.stats.states_explored,
    )

    verdict = ConvergenceVerdict(
        relation,
        Method.GLB_REFINEMENT,
        refinement.status,
        refinement.counterexample,
        refinement.stats,
        (f"gap {cfg.gap}",),
    )
    if refinement.passed:
        return finish(verdict)

    witness = refinement.counterexample
    events = witness.trace + ((witness.event,) if witness.event is not None else ())
    run = _longest_new_run(classify_witness(t, t_prime, events), relation)
    if witness.event is None:
        run = max(run, _blocked_run(t, t_prime, witness.trace, relation))
    if run <= cfg.gap:
        return finish(verdict)

    note = f"{GAP_TOO_SMALL}: witness {format_trace(events)} runs {run} new-in-context events past gap {cfg.gap}"
    logger.warning(note)
    return finish(_oracle(relation, t, t_prime), note, gap_limited=True)


def check_cvg(
    t: NormLts, t_prime: NormLts, cfg: GlbConfig | None = None, options: CheckOptions | None = None
) -> ConvergenceVerdict:
    """Whether ``t_prime`` converges to ``t``."""
    return _check(Relation.CVG, t, t_prime, cfg, options)


def check_ecvg(
    t: NormLts, t_prime: NormLts, cfg: GlbConfig | None = None, options: CheckOptions | None = None
) -> ConvergenceVerdict:
    """Whether ``t_prime`` converges to ``t`` in the extended sense."""
    return _check(Relation.ECVG, t, t_prime, cfg, options)
