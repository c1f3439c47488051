import logging
from collections import deque
from typing import Iterable, Mapping

import networkx as nx

from src.app.entities import (
    END,
    START,
    TAU,
    TICK,
    ChannelDecl,
    Counterexample,
    Direction,
    Event,
    FailuresModel,
    IoReport,
    Lts,
    NormLts,
    SerialEntry,
    SerialProcess,
    Trace,
    Verdict,
    canonical,
    format_trace,
    walk_model,
)
from src.app.services.lts_service import (
    _shortest_trace_to,
    check_divergence_free,
    normalize,
    quotient,
)
from src.exceptions import SerialShape

logger = logging.getLogger(__name__)

_RETURN = "return"


# ---------- Observations ----------


def obs_in(p: FailuresModel, trace: Iterable[Event]) -> frozenset[Event]:
    """Inputs ``p`` can communicate after ``trace``."""
    state = walk_model(p, trace)
    return frozenset(e for e in p.initials(state) if e.direction is Direction.IN)


def obs_out(p: FailuresModel, trace: Iterable[Event]) -> frozenset[Event]:
    """Outputs ``p`` can communicate after ``trace``."""
    state = walk_model(p, trace)
    return frozenset(e for e in p.initials(state) if e.direction is Direction.OUT)


# ---------- I/O process conditions ----------


def _decls_by_name(decls: Mapping[str, ChannelDecl] | Iterable[ChannelDecl]) -> dict[str, ChannelDecl]:
    if isinstance(decls, Mapping):
        return dict(decls)
    return {d.name: d for d in decls}


def _check_channels(lts: Lts, decls: dict[str, ChannelDecl]) -> Verdict:
    for event in canonical(lts.alphabet):
        if event.is_marker:
            continue
        decl = decls.get(event.channel)
        if decl is not None and decl.io_discipline:
            continue
        sources = frozenset(s for s, label, _ in lts.edges() if label == event)
        trace = _shortest_trace_to(lts, sources) or ()
        witness = Counterexample(
            trace, event=event, detail=f"channel {event.channel} has no in/out discipline"
        )
        return Verdict.fail(witness, lts.n_states)
    return Verdict.ok(lts.n_states)


def _check_infinite(lts: Lts) -> Verdict:
    graph = nx.DiGraph()
    graph.add_nodes_from(range(lts.n_states))
    for source, label, target in lts.edges():
        visible = label not in (TAU, TICK)
        if graph.has_edge(source, target):
            graph[source][target]["visible"] |= visible
        else:
            graph.add_edge(source, target, visible=visible)

    reachable = nx.descendants(graph, lts.root) | {lts.root}
    for component in nx.strongly_connected_components(graph.subgraph(reachable)):
        for source, target, data in graph.subgraph(component).edges(data=True):
            if data["visible"]:
                return Verdict.ok(lts.n_states)
    return Verdict.fail(Counterexample((), detail="every trace is finite"), lts.n_states)


def _visit(norm: NormLts) -> Iterable[tuple[int, Trace]]:
    seen = {norm.root}
    queue: deque[tuple[int, Trace]] = deque([(norm.root, ())])
    while queue:
        state, trace = queue.popleft()
        yield state, trace
        for event, target in norm.successors[state]:
            if target not in seen:
                seen.add(target)
                queue.append((target, trace + (event,)))


def _check_input_determinism(norm: NormLts) -> Verdict:
    sigma_tick = norm.universe | {TICK}
    for state, trace in _visit(norm):
        offered = frozenset(e for e in norm.initials(state) if e.direction is Direction.IN)
        for acceptance in norm.acceptances(state):
            accepted = frozenset(e for e in acceptance if e.direction is Direction.IN)
            if accepted and not offered <= accepted:
                witness = Counterexample(
                    trace,
                    refusal=sigma_tick - acceptance,
                    detail="some offered inputs are refused while others are accepted",
                )
                return Verdict.fail(witness, norm.n_states)
    return Verdict.ok(norm.n_states)


def _check_output_decisiveness(norm: NormLts) -> Verdict:
    sigma_tick = norm.universe | {TICK}
    for state, trace in _visit(norm):
        by_channel: dict[str, set[Event]] = {}
        for event in norm.initials(state):
            if event.direction is Direction.OUT:
                by_channel.setdefault(event.channel, set()).add(event)

        acceptances = norm.acceptances(state)
        for channel, outputs in by_channel.items():
            for acceptance in acceptances:
                if not acceptance & outputs:
                    witness = Counterexample(
                        trace,
                        refusal=sigma_tick - acceptance,
                        detail=f"every output on {channel} can be refused",
                    )
                    return Verdict.fail(witness, norm.n_states)
            for output in canonical(outputs):
                if not any(acceptance & outputs == {output} for acceptance in acceptances):
                    witness = Counterexample(
                        trace,
                        event=output,
                        detail=f"{output} is never chosen internally among the outputs on {channel}",
                    )
                    return Verdict.fail(witness, norm.n_states)
    return Verdict.ok(norm.n_states)


def check_io_process(p: Lts, decls: Mapping[str, ChannelDecl] | Iterable[ChannelDecl]) -> IoReport:
    """The five conditions an I/O process satisfies, each with its own verdict."""
    norm = normalize(p, tolerate_divergence=True)
    report = IoReport(
        (
            _check_channels(p, _decls_by_name(decls)),
            _check_infinite(p),
            check_divergence_free(p),
            _check_input_determinism(norm),
            _check_output_decisiveness(norm),
        )
    )
    logger.info("io process check: %s", "PASS" if report.passed else f"condition {report.first_failure()[0]} fails")
    return report


# ---------- Depth ----------


def _first_return_graph(q: NormLts) -> nx.MultiDiGraph:
    graph = nx.MultiDiGraph()
    graph.add_nodes_from(range(q.n_states))
    graph.add_node(_RETURN)
    for source in range(q.n_states):
        for event, target in q.successors[source]:
            graph.add_edge(source, _RETURN if target == q.root else target, event=event)
    return graph


def _shape_error(q: NormLts, graph: nx.MultiDiGraph) -> SerialShape | None:
    try:
        cycle = nx.find_cycle(graph, source=q.root)
    except nx.NetworkXNoCycle:
        return None
    entry = cycle[0][0]
    reach = nx.shortest_path(graph, q.root, entry)
    trace = [graph.edges[u, v, 0]["event"] for u, v in zip(reach, reach[1:])]
    loop = [graph.edges[u, v, k]["event"] for u, v, k in cycle]
    return SerialShape(
        f"cycle {format_trace(loop)} after {format_trace(trace)} avoids the initial state"
    )


def _depth_of(q: NormLts) -> int:
    graph = _first_return_graph(q)
    error = _shape_error(q, graph)
    if error is not None:
        raise error

    longest: dict = {q.root: 0}
    for state in nx.topological_sort(graph):
        if state not in longest:
            continue
        for _, target in graph.out_edges(state):
            longest[target] = max(longest.get(target, 0), longest[state] + 1)
    if _RETURN not in longest:
        raise SerialShape("the process never returns to its initial state")
    return longest[_RETURN]


def depth(p: NormLts) -> int:
    """Length of the longest trace returning to the initial state for the first time."""
    return _depth_of(quotient(p))


# ---------- Serialization ----------


def serialize(p: NormLts) -> SerialProcess:
    """Depth-first (ev, a_ev, level) table of a process whose cycles pass its root."""
    q = quotient(p)
    source_depth = _depth_of(q)

    def offers(state: int) -> tuple[Event, ...]:
        return (END,) if state == q.root else canonical(q.initials(state))

    entries = [SerialEntry(START, offers(q.root), 0)]
    stack: list[tuple[int, int, int]] = [(q.root, 1, 0)]
    while stack:
        state, level, position = stack.pop()
        successors = q.successors[state]
        if position >= len(successors):
            continue
        stack.append((state, level, position + 1))
        event, target = successors[position]
        entries.append(SerialEntry(event, offers(target), level))
        if target == q.root:
            entries.append(SerialEntry(END, (), level + 1))
        else:
            stack.append((target, level + 1, 0))

    logger.debug("serialized %d states into %d entries", q.n_states, len(entries))
    universe = p.universe
    return SerialProcess(
        tuple(entries),
        frozenset(e for e in universe if e.direction is Direction.IN),
        frozenset(e for e in universe if e.direction is Direction.OUT),
        source_depth,
    )


def branch(key: Event, s: Iterable[SerialEntry], l: int, b: bool = False) -> tuple[SerialEntry, ...]:
    """The subtree under the entry ``(key, _, l)``, up to the next sibling at level ``l``."""
    result = []
    for entry in s:
        if entry.ev == key and entry.level == l:
            result.append(entry)
            b = True
        elif b:
            if entry.ev != key and entry.level == l:
                break
            result.append(entry)
    return tuple(result)


def branch_span(entries: tuple[SerialEntry, ...], key: Event, start: int, stop: int, level: int) -> tuple[int, int]:
    """``branch`` over ``entries[start:stop]`` as an index range into ``entries``."""
    first = None
    for index in range(start, stop):
        entry = entries[index]
        if first is None:
            if entry.ev == key and entry.level == level:
                first = index
        elif entry.level == level and entry.ev != key:
            return first, index
    if first is None:
        return stop, stop
    return first, stop


def decode(sp: SerialProcess, universe: frozenset[Event] | None = None) -> Lts:
    """Replay a table into an automaton: inputs external, outputs chosen internally."""
    moves: list[list[tuple[Event, int]]] = [[]]
    open_states = {0: 0}
    for entry in sp.entries[1:]:
        if entry.ev == END:
            continue
        parent = open_states[entry.level - 1]
        if entry.a_ev == (END,):
            target = 0
        else:
            target = len(moves)
            moves.append([])
        open_states[entry.level] = target
        moves[parent].append((entry.ev, target))

    transitions: list[tuple[tuple[Event, int], ...]] = []
    helpers: list[tuple[tuple[Event, int], ...]] = []

    def by_rank(edges):
        return tuple(sorted(edges, key=lambda edge: (edge[0].rank, edge[1])))

    for outgoing in moves:
        external = [m for m in outgoing if m[0].direction is not Direction.OUT]
        internal = [m for m in outgoing if m[0].direction is Direction.OUT]
        if not internal:
            transitions.append(by_rank(external))
            continue
        taus = []
        for move in internal:
            taus.append((TAU, len(moves) + len(helpers)))
            helpers.append(by_rank(external + [move]))
        transitions.append(by_rank(taus))

    alphabet = frozenset(e for out in moves for e, _ in out)
    return Lts(0, tuple(transitions) + tuple(helpers), alphabet, universe or (sp.inputs | sp.outputs))
