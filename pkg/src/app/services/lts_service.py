import logging
import threading
from collections import deque
from operator import itemgetter
from typing import Iterable

import networkx as nx

from src.app.entities import (
    TAU,
    TICK,
    Event,
    Lts,
    NormLts,
    Counterexample,
    Verdict,
    canonical,
    format_trace,
    minimal_sets,
    value_key,
)
from src.app.printer import format_expr
from src.app.services.expr_service import Evaluator
from src.app.syntax import (
    ExtChoice,
    Guard,
    Hide,
    IfThenElse,
    Interleave,
    IntChoice,
    Node,
    ParSync,
    Prefix,
    ProcessDef,
    Ref,
    Rename,
    ReplExtChoice,
    ReplInterleave,
    ReplIntChoice,
    ReplParSync,
    Seq,
    Skip,
    Spec,
    Stop,
    free_vars,
    node,
)
from src.exceptions import Divergent, EmptyReplication, StateBudgetExceeded, UnboundName

logger = logging.getLogger(__name__)

DEFAULT_MAX_STATES = 100_000

Transitions = tuple[tuple[Event, "Node"], ...]


# ---------- Runtime terms ----------


@node
class Omega(Node):
    """The state after successful termination."""


@node
class Closure(Node):
    body: Node
    env: tuple[tuple[str, object], ...] = ()


@node
class PrefixT(Node):
    event: Event
    then: Node


@node
class ExtT(Node):
    options: tuple[Node, ...]


@node
class IntT(Node):
    options: tuple[Node, ...]


@node
class SeqT(Node):
    first: Node
    then: Node


@node
class HideT(Node):
    body: Node
    hidden: frozenset[Event]


@node
class RenameT(Node):
    body: Node
    relation: tuple[tuple[Event, tuple[Event, ...]], ...]


@node
class ParT(Node):
    parts: tuple[Node, ...]
    sync: frozenset[Event]


STOP, SKIP, OMEGA = Stop(), Skip(), Omega()


class TermSemantics:
    """Operational semantics of process terms with memoised transitions."""

    def __init__(self, spec: Spec, max_states: int = DEFAULT_MAX_STATES):
        self.spec = spec
        self.max_states = max_states
        self.universe = spec.catalogue.universe
        self._evaluator = Evaluator(spec)
        self._interned: dict[Node, Node] = {}
        self._expanded: dict[Closure, Node] = {}
        self._transitions: dict[Node, Transitions] = {}
        self._active: set[Node] = set()

    def _mk(self, term: Node) -> Node:
        return self._interned.setdefault(term, term)

    def closure(self, body: Node, env=None) -> Node:
        env = env or {}
        names = free_vars(body)
        kept = tuple(sorted(((k, v) for k, v in env.items() if k in names), key=itemgetter(0)))
        return self._mk(Closure(body, kept))

    # ---------- static unfolding ----------

    def expand(self, term: Node) -> Node:
        if not isinstance(term, Closure):
            return term
        cached = self._expanded.get(term)
        if cached is None:
            cached = self._expand(term.body, dict(term.env), ())
            self._expanded[term] = cached
        return cached

    def _expand(self, n: Node, env: dict, unfolding: tuple) -> Node:
        ev = self._evaluator
        match n:
            case Stop():
                return STOP
            case Skip():
                return SKIP
            case Ref(name=name, args=args):
                definition = self.spec.processes.get(name)
                if definition is None:
                    raise UnboundName(f"process {name} is not defined")
                values = tuple(ev.value(a, env) for a in args)
                key = (name, values)
                if key in unfolding:
                    raise Divergent(f"unguarded recursion through {name}")
                inner = dict(zip(definition.params, values))
                return self._expand(definition.body, inner, unfolding + (key,))
            case Guard(cond=cond, body=body):
                return self._expand(body, env, unfolding) if ev.boolean(cond, env) else STOP
            case IfThenElse(cond=cond, then=then, orelse=orelse):
                branch = then if ev.boolean(cond, env) else orelse
                return self._expand(branch, env, unfolding)
            case Prefix(pattern=pattern, body=body):
                options = [
                    self._mk(PrefixT(event, self.closure(body, {**env, **dict(bound)})))
                    for event, bound in ev.offers(pattern, env)
                ]
                return self._ext(options)
            case ExtChoice(left=left, right=right):
                return self._ext([self.closure(left, env), self.closure(right, env)])
            case IntChoice(left=left, right=right):
                return self._mk(IntT((self.closure(left, env), self.closure(right, env))))
            case Seq(left=left, right=right):
                return self._mk(SeqT(self.closure(left, env), self.closure(right, env)))
            case Hide(body=body, events=events):
                return self._mk(HideT(self.closure(body, env), ev.events(events, env)))
            case Rename(body=body, pairs=pairs):
                relation = ev.renaming(pairs, env)
                ordered = tuple(sorted(relation.items(), key=lambda kv: kv[0].rank))
                return self._mk(RenameT(self.closure(body, env), ordered))
            case ParSync(left=left, sync=sync, right=right):
                parts = (self.closure(left, env), self.closure(right, env))
                return self._mk(ParT(parts, ev.events(sync, env)))
            case Interleave(left=left, right=right):
                return self._mk(ParT((self.closure(left, env), self.closure(right, env)), frozenset()))
            case ReplExtChoice() | ReplIntChoice() | ReplInterleave() | ReplParSync():
                return self._replicated(n, env)
        raise TypeError(f"{type(n).__name__} is not a process")

    def _replicated(self, n, env: dict) -> Node:
        values = sorted(self._evaluator.set_value(n.domain, env), key=value_key)
        parts = [self.closure(n.body, {**env, n.var: v}) for v in values]
        match n:
            case ReplExtChoice():
                return self._ext(parts)
            case ReplIntChoice():
                if not parts:
                    raise EmptyReplication(f"internal choice over {n.var} ranges over an empty set")
                return parts[0] if len(parts) == 1 else self._mk(IntT(tuple(parts)))
            case ReplInterleave():
                return self._mk(ParT(tuple(parts), frozenset())) if parts else SKIP
            case ReplParSync(sync=sync):
                return self._mk(ParT(tuple(parts), self._evaluator.events(sync, env))) if parts else SKIP

    def _ext(self, options: list[Node]) -> Node:
        kept = tuple(o for o in options if o is not STOP)
        if not kept:
            return STOP
        if len(kept) == 1:
            return kept[0]
        return self._mk(ExtT(kept))

    # ---------- transitions ----------

    def transitions(self, term: Node) -> Transitions:
        cached = self._transitions.get(term)
        if cached is not None:
            return cached
        if term in self._active:
            raise Divergent(f"unguarded recursion in {self.describe(term)}")
        self._active.add(term)
        try:
            result = self._step(term)
        finally:
            self._active.discard(term)
        self._transitions[term] = result
        return result

    def _step(self, term: Node) -> Transitions:
        mk = self._mk
        match term:
            case Closure():
                return self.transitions(self.expand(term))
            case Stop() | Omega():
                return ()
            case Skip():
                return ((TICK, OMEGA),)
            case PrefixT(event=event, then=then):
                return ((event, then),)
            case IntT(options=options):
                return tuple((TAU, o) for o in options)
            case ExtT(options=options):
                out = []
                for i, option in enumerate(options):
                    for label, target in self.transitions(option):
                        if label == TAU:
                            out.append((TAU, mk(ExtT(options[:i] + (target,) + options[i + 1 :]))))
                        else:
                            out.append((label, target))
                return tuple(out)
            case SeqT(first=first, then=then):
                out = []
                for label, target in self.transitions(first):
                    if label == TICK:
                        out.append((TAU, then))
                    else:
                        out.append((label, mk(SeqT(target, then))))
                return tuple(out)
            case HideT(body=body, hidden=hidden):
                out = []
                for label, target in self.transitions(body):
                    successor = OMEGA if target is OMEGA else mk(HideT(target, hidden))
                    out.append((TAU if label in hidden else label, successor))
                return tuple(out)
            case RenameT(body=body, relation=relation):
                table = dict(relation)
                out = []
                for label, target in self.transitions(body):
                    successor = OMEGA if target is OMEGA else mk(RenameT(target, relation))
                    for image in table.get(label, (label,)):
                        out.append((image, successor))
                return tuple(out)
            case ParT():
                return self._parallel(term)
        raise TypeError(f"no transitions for {type(term).__name__}")

    def _parallel(self, term: ParT) -> Transitions:
        parts, sync = term.parts, term.sync
        if all(p is OMEGA for p in parts):
            return ((TICK, OMEGA),)

        def swap(i: int, target: Node) -> Node:
            return self._mk(ParT(parts[:i] + (target,) + parts[i + 1 :], sync))

        out = []
        shared: list[dict[Event, list[Node]]] = []
        for i, part in enumerate(parts):
            offers: dict[Event, list[Node]] = {}
            for label, target in self.transitions(part):
                if label == TAU:
                    out.append((TAU, swap(i, target)))
                elif label == TICK:
                    out.append((TAU, swap(i, OMEGA)))
                elif label in sync:
                    offers.setdefault(label, []).append(target)
                else:
                    out.append((label, swap(i, target)))
            shared.append(offers)

        for event in canonical(set.intersection(*(set(o) for o in shared))):
            combos: list[tuple[Node, ...]] = [()]
            for offers in shared:
                combos = [c + (t,) for c in combos for t in offers[event]]
            out.extend((event, self._mk(ParT(c, sync))) for c in combos)
        return tuple(out)

    def describe(self, term: Node) -> str:
        if isinstance(term, Closure):
            return format_expr(term.body)
        return type(term).__name__

    # ---------- closures over tau ----------

    def tau_closure(self, terms: Iterable[Node]) -> frozenset[Node]:
        stack = list(terms)
        closure = set(stack)
        while stack:
            term = stack.pop()
            for label, target in self.transitions(term):
                if label == TAU and target not in closure:
                    closure.add(target)
                    stack.append(target)
        return frozenset(closure)


# ---------- Eager automata ----------


def compile(spec: Spec, expr: Node, max_states: int = DEFAULT_MAX_STATES, semantics=None) -> Lts:
    """Explore the reachable terms of ``expr`` breadth first into an Lts."""
    semantics = semantics or TermSemantics(spec, max_states)
    root = semantics.closure(expr)
    index = {root: 0}
    order = [root]
    parent: list[tuple[int, Event] | None] = [None]
    transitions = []

    queue = deque([root])
    while queue:
        term = queue.popleft()
        outgoing = []
        for label, target in semantics.transitions(term):
            if target not in index:
                if len(order) >= max_states:
                    raise _budget_error(max_states, parent, index[term], label)
                index[target] = len(order)
                order.append(target)
                parent.append((index[term], label))
                queue.append(target)
            outgoing.append((label, index[target]))
        outgoing.sort(key=lambda edge: (edge[0].rank, edge[1]))
        transitions.append(tuple(outgoing))

    alphabet = frozenset(label for out in transitions for label, _ in out if label not in (TAU, TICK))
    logger.info("compiled %s: %d states", format_expr(expr), len(order))
    return Lts(0, tuple(transitions), alphabet, spec.catalogue.universe)


def _budget_error(budget: int, parent, state: int, last: Event) -> StateBudgetExceeded:
    trace = [last] if last not in (TAU, TICK) else []
    while parent[state] is not None:
        state, label = parent[state]
        if label not in (TAU, TICK):
            trace.append(label)
    trace.reverse()
    return StateBudgetExceeded(f"more than {budget} states; deepest trace {format_trace(trace)}")


def _tau_graph(lts: Lts) -> nx.DiGraph:
    graph = nx.DiGraph()
    graph.add_nodes_from(range(lts.n_states))
    graph.add_edges_from((s, t) for s, label, t in lts.edges() if label == TAU)
    return graph


def _divergent_states(lts: Lts) -> frozenset[int]:
    graph = _tau_graph(lts)
    result: set[int] = set()
    for component in nx.strongly_connected_components(graph):
        if len(component) > 1 or any(graph.has_edge(s, s) for s in component):
            result |= component
    return frozenset(result)


def _shortest_trace_to(lts: Lts, targets: frozenset[int]) -> tuple[Event, ...] | None:
    # 0-1 breadth first search: tau edges cost nothing
    best = {lts.root: ()}
    queue = deque([lts.root])
    while queue:
        state = queue.popleft()
        if state in targets:
            return best[state]
        for label, target in lts.transitions[state]:
            if label == TICK:
                continue
            trace = best[state] if label == TAU else best[state] + (label,)
            if target not in best or len(trace) < len(best[target]):
                best[target] = trace
                if label == TAU:
                    queue.appendleft(target)
                else:
                    queue.append(target)
    return None


def check_divergence_free(lts: Lts) -> Verdict:
    divergent = _divergent_states(lts)
    trace = _shortest_trace_to(lts, divergent) if divergent else None
    if trace is None:
        return Verdict.ok(lts.n_states)
    witness = Counterexample(trace, detail="reaches a cycle of internal actions")
    return Verdict.fail(witness, lts.n_states)


def normalize(lts: Lts, tolerate_divergence: bool = False, max_states: int | None = None) -> NormLts:
    """Subset construction over tau closures, annotated with minimal acceptances."""
    divergent = _divergent_states(lts)
    by_label = [dict() for _ in range(lts.n_states)]
    for source, label, target in lts.edges():
        by_label[source].setdefault(label, []).append(target)

    def tau_closure(states: Iterable[int]) -> frozenset[int]:
        stack = list(states)
        closure = set(stack)
        while stack:
            state = stack.pop()
            for target in by_label[state].get(TAU, ()):
                if target not in closure:
                    closure.add(target)
                    stack.append(target)
        return frozenset(closure)

    root = tau_closure({lts.root})
    index = {root: 0}
    nodes = [root]
    traces: list[tuple[Event, ...]] = [()]
    successors, acceptances, terminating = [], [], []

    position = 0
    while position < len(nodes):
        current = nodes[position]
        if divergent & current and not tolerate_divergence:
            raise Divergent(f"divergence after {format_trace(traces[position])}")

        accepts = []
        for state in current:
            labels = by_label[state]
            if TICK in labels:
                accepts.append(frozenset({TICK}))
            elif TAU not in labels:
                accepts.append(frozenset(labels))
        acceptances.append(minimal_sets(accepts))
        terminating.append(any(TICK in by_label[s] for s in current))

        moves: dict[Event, set[int]] = {}
        for state in current:
            for label, targets in by_label[state].items():
                if label not in (TAU, TICK):
                    moves.setdefault(label, set()).update(targets)

        outgoing = []
        for event in canonical(moves):
            target = tau_closure(moves[event])
            if target not in index:
                if max_states is not None and len(nodes) >= max_states:
                    raise StateBudgetExceeded(
                        f"more than {max_states} normal-form states; deepest trace "
                        f"{format_trace(traces[position] + (event,))}"
                    )
                index[target] = len(nodes)
                nodes.append(target)
                traces.append(traces[position] + (event,))
            outgoing.append((event, index[target]))
        successors.append(tuple(outgoing))
        position += 1

    logger.info("normalized %d states into %d", lts.n_states, len(nodes))
    return NormLts(0, tuple(successors), tuple(acceptances), tuple(terminating), lts.alphabet, lts.universe)


def project(lts: Lts, channels: Iterable[str], only: frozenset[Event] | None = None) -> Lts:
    """Hide every visible event outside ``channels`` (and outside ``only`` when given)."""
    keep = frozenset(channels)

    def visible(label: Event) -> bool:
        return label.channel in keep and (only is None or label in only)

    def relabel(label: Event) -> Event:
        if label in (TAU, TICK) or visible(label):
            return label
        return TAU

    transitions = tuple(
        tuple(sorted(((relabel(l), t) for l, t in out), key=lambda edge: (edge[0].rank, edge[1])))
        for out in lts.transitions
    )
    alphabet = frozenset(e for e in lts.alphabet if visible(e))
    universe = frozenset(e for e in lts.universe if e.channel in keep)
    return Lts(lts.root, transitions, alphabet, universe, lts.labels)


def interleave_norm(a: NormLts, b: NormLts) -> NormLts:
    """Normal form of the interleaving of two normal forms over disjoint alphabets."""
    index = {(a.root, b.root): 0}
    pairs = [(a.root, b.root)]
    successors, acceptances, terminating = [], [], []

    position = 0
    while position < len(pairs):
        sa, sb = pairs[position]
        moves = [(e, (t, sb)) for e, t in a.successors[sa]] + [(e, (sa, t)) for e, t in b.successors[sb]]
        outgoing = []
        for event, target in sorted(moves, key=lambda m: m[0].rank):
            if target not in index:
                index[target] = len(pairs)
                pairs.append(target)
            outgoing.append((event, index[target]))
        successors.append(tuple(outgoing))

        both_done = a.terminating[sa] and b.terminating[sb]
        combined = []
        for left in a.acceptance_sets[sa]:
            for right in b.acceptance_sets[sb]:
                joint = (left | right) - {TICK}
                if TICK in left and TICK in right:
                    joint |= {TICK}
                combined.append(joint)
        acceptances.append(minimal_sets(combined))
        terminating.append(both_done)
        position += 1

    return NormLts(
        0,
        tuple(successors),
        tuple(acceptances),
        tuple(terminating),
        a.alphabet | b.alphabet,
        a.universe | b.universe,
    )


def quotient(norm: NormLts) -> NormLts:
    """Merge failures-equivalent states by partition refinement."""
    block = [
        (norm.acceptance_sets[s], norm.terminating[s]) for s in range(norm.n_states)
    ]
    ids: dict = {}
    partition = [ids.setdefault(key, len(ids)) for key in block]

    while True:
        signatures: dict = {}
        refined = []
        for state in range(norm.n_states):
            signature = (
                partition[state],
                tuple((e, partition[t]) for e, t in norm.successors[state]),
            )
            refined.append(signatures.setdefault(signature, len(signatures)))
        if len(signatures) == len(set(partition)):
            break
        partition = refined

    # renumber blocks in breadth-first order from the root
    order = {partition[norm.root]: 0}
    queue = deque([norm.root])
    representative = {0: norm.root}
    while queue:
        state = queue.popleft()
        for _, target in norm.successors[state]:
            b = partition[target]
            if b not in order:
                order[b] = len(order)
                representative[order[b]] = target
                queue.append(target)

    successors, acceptances, terminating = [], [], []
    for number in range(len(order)):
        state = representative[number]
        successors.append(tuple((e, order[partition[t]]) for e, t in norm.successors[state]))
        acceptances.append(norm.acceptance_sets[state])
        terminating.append(norm.terminating[state])
    return NormLts(0, tuple(successors), tuple(acceptances), tuple(terminating), norm.alphabet, norm.universe)


def lts_from_norm(norm: NormLts) -> Lts:
    """Re-encode a normal form as an Lts whose failures are those of ``norm``."""
    omega = norm.n_states
    extra: list[tuple[tuple[Event, int], ...]] = [()]
    transitions = []

    def by_rank(edges):
        return tuple(sorted(edges, key=lambda edge: (edge[0].rank, edge[1])))

    for state in range(norm.n_states):
        moves = dict(norm.successors[state])
        acceptances = list(norm.acceptance_sets[state])
        if not norm.terminating[state] and acceptances == [frozenset(moves)]:
            transitions.append(by_rank(moves.items()))
            continue

        if norm.terminating[state] and not any(TICK in a for a in acceptances):
            acceptances.append(frozenset({TICK}))
        outgoing = list(moves.items())
        for acceptance in acceptances:
            stable = [(e, moves[e]) for e in acceptance if e != TICK]
            if TICK in acceptance:
                stable.append((TICK, omega))
            outgoing.append((TAU, omega + len(extra)))
            extra.append(by_rank(stable))
        if not acceptances:
            # no stable member: the state only diverges
            outgoing.append((TAU, state))
        transitions.append(by_rank(outgoing))

    return Lts(norm.root, tuple(transitions) + tuple(extra), norm.alphabet, norm.universe)


# ---------- Lazy normal form ----------


class LazyNormalForm:
    """Normal form whose nodes are tau-closed sets of terms, built on demand."""

    def __init__(
        self,
        semantics: TermSemantics,
        expr: Node,
        tolerate_divergence: bool = False,
        max_states: int | None = None,
    ):
        self._semantics = semantics
        self._tolerate = tolerate_divergence
        self._max_states = max_states or semantics.max_states
        self._info: dict[frozenset, tuple] = {}
        self.universe = semantics.universe
        self.alphabet = semantics.universe
        self.root = semantics.tau_closure([semantics.closure(expr)])

    @property
    def n_states(self) -> int:
        return len(self._info)

    def _node(self, node: frozenset) -> tuple:
        info = self._info.get(node)
        if info is not None:
            return info
        if len(self._info) >= self._max_states:
            raise StateBudgetExceeded(f"more than {self._max_states} normal-form states")

        semantics = self._semantics
        if not self._tolerate:
            graph = nx.DiGraph()
            for term in node:
                for label, target in semantics.transitions(term):
                    if label == TAU:
                        graph.add_edge(term, target)
            if not nx.is_directed_acyclic_graph(graph):
                raise Divergent("divergence in a normal-form state")

        accepts = []
        moves: dict[Event, list[Node]] = {}
        terminating = False
        for term in node:
            transitions = semantics.transitions(term)
            labels = {label for label, _ in transitions}
            if TICK in labels:
                terminating = True
                accepts.append(frozenset({TICK}))
            elif TAU not in labels:
                accepts.append(frozenset(labels))
            for label, target in transitions:
                if label not in (TAU, TICK):
                    moves.setdefault(label, []).append(target)

        successors = {e: semantics.tau_closure(moves[e]) for e in canonical(moves)}
        info = (successors, minimal_sets(accepts), terminating)
        self._info[node] = info
        return info

    def initials(self, state: frozenset) -> tuple[Event, ...]:
        return tuple(self._node(state)[0])

    def after(self, state: frozenset, event: Event) -> frozenset | None:
        return self._node(state)[0].get(event)

    def acceptances(self, state: frozenset) -> tuple[frozenset[Event], ...]:
        return self._node(state)[1]

    def can_terminate(self, state: frozenset) -> bool:
        return self._node(state)[2]


# ---------- Shared models ----------


class ModelCache:
    """Compiled and normalized models of one spec, shared between worker threads."""

    def __init__(self, spec: Spec, max_states: int = DEFAULT_MAX_STATES):
        self.spec = spec
        self.max_states = max_states
        self._lock = threading.Lock()
        self._lts: dict[tuple, Lts] = {}
        self._norm: dict[tuple, NormLts] = {}

    def lts(self, expr: Node, definitions: tuple[ProcessDef, ...] = ()) -> Lts:
        key = (expr, definitions)
        with self._lock:
            cached = self._lts.get(key)
        if cached is not None:
            return cached

        # TermSemantics keeps per-walk state, so every compile gets its own
        semantics = TermSemantics(self.spec.extend(definitions), self.max_states)
        lts = compile(semantics.spec, expr, self.max_states, semantics)
        with self._lock:
            return self._lts.setdefault(key, lts)

    def norm(
        self, expr: Node, tolerate_divergence: bool = False, definitions: tuple[ProcessDef, ...] = ()
    ) -> NormLts:
        key = (expr, definitions, tolerate_divergence)
        with self._lock:
            cached = self._norm.get(key)
        if cached is not None:
            return cached

        norm = normalize(self.lts(expr, definitions), tolerate_divergence, self.max_states)
        with self._lock:
            return self._norm.setdefault(key, norm)


# ---------- Debug export ----------


def to_graph(automaton: Lts | NormLts) -> nx.MultiDiGraph:
    graph = nx.MultiDiGraph()
    if isinstance(automaton, NormLts):
        for state in range(automaton.n_states):
            offers = " | ".join(
                "{" + ", ".join(str(e) for e in canonical(a)) + "}" for a in automaton.acceptance_sets[state]
            )
            label = f"{state}\\nacc: {offers or '-'}"
            if automaton.terminating[state]:
                label += " ✓"
            graph.add_node(state, label=f'"{label}"', shape="box")
            for event, target in automaton.successors[state]:
                graph.add_edge(state, target, label=f'"{event}"')
    else:
        for state in range(automaton.n_states):
            graph.add_node(state, label=f'"{state}"', shape="circle")
        for source, label, target in automaton.edges():
            graph.add_edge(source, target, label=f'"{label}"')
    graph.nodes[automaton.root]["peripheries"] = 2
    return graph


def export_graph(automaton: Lts | NormLts) -> str:
    """DOT text for an automaton, with acceptance annotations on normal forms."""
    return nx.nx_pydot.to_pydot(to_graph(automaton)).to_string()
