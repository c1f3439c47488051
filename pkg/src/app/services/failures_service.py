import itertools
import logging
from collections import deque
from typing import Iterable

from src.app.entities import (
    TICK,
    Counterexample,
    Event,
    Failure,
    FailuresModel,
    Trace,
    Verdict,
    canonical,
    format_trace,
    walk_model,
)
from src.exceptions import AlphabetMismatch

logger = logging.getLogger(__name__)


def _covered(acceptance: frozenset[Event], spec_acceptances: Iterable[frozenset[Event]]) -> bool:
    # a refusal of the candidate is allowed when some spec refusal contains it
    return any(a <= acceptance for a in spec_acceptances)


def check_failures_refinement(spec_p: FailuresModel, impl_q: FailuresModel) -> Verdict:
    """Every stable failure of ``impl_q`` is a stable failure of ``spec_p``.

    Explores the product breadth first so the witness trace is a shortest one;
    events are tried in canonical order.
    """
    if spec_p.universe != impl_q.universe:
        raise AlphabetMismatch("refinement operands are declared over different alphabets")

    sigma_tick = spec_p.universe | {TICK}
    start = (spec_p.root, impl_q.root)
    seen = {start}
    queue: deque[tuple[object, object, Trace]] = deque([(spec_p.root, impl_q.root, ())])

    while queue:
        p, q, trace = queue.popleft()

        spec_acceptances = spec_p.acceptances(p)
        for acceptance in impl_q.acceptances(q):
            if not _covered(acceptance, spec_acceptances):
                witness = Counterexample(trace, refusal=sigma_tick - acceptance)
                return Verdict.fail(witness, len(seen))

        if impl_q.can_terminate(q) and not spec_p.can_terminate(p):
            return Verdict.fail(Counterexample(trace, event=TICK), len(seen))

        successors = []
        for event in impl_q.initials(q):
            p_next = spec_p.after(p, event)
            if p_next is None:
                return Verdict.fail(Counterexample(trace, event=event), len(seen))
            successors.append((event, p_next, impl_q.after(q, event)))

        for event, p_next, q_next in sorted(successors, key=lambda s: s[0].rank):
            if (p_next, q_next) not in seen:
                seen.add((p_next, q_next))
                queue.append((p_next, q_next, trace + (event,)))

    logger.debug("refinement holds over %d state pairs", len(seen))
    return Verdict.ok(len(seen))


def check_failures_equivalence(a: FailuresModel, b: FailuresModel) -> Verdict:
    forward = check_failures_refinement(a, b)
    if not forward.passed:
        return forward
    backward = check_failures_refinement(b, a)
    if not backward.passed:
        return Verdict.fail(
            backward.counterexample,
            forward.stats.states_explored + backward.stats.states_explored,
            notes=("the second operand does not refine the first",),
        )
    return Verdict.ok(forward.stats.states_explored + backward.stats.states_explored)


def check_deadlock_free(p: FailuresModel) -> Verdict:
    """No reachable state can refuse every event and termination."""
    sigma_tick = p.universe | {TICK}
    seen = {p.root}
    queue: deque[tuple[object, Trace]] = deque([(p.root, ())])
    while queue:
        state, trace = queue.popleft()
        if any(not acceptance for acceptance in p.acceptances(state)):
            return Verdict.fail(Counterexample(trace, refusal=sigma_tick), len(seen))
        for event in canonical(p.initials(state)):
            target = p.after(state, event)
            if target not in seen:
                seen.add(target)
                queue.append((target, trace + (event,)))
    return Verdict.ok(len(seen))


def maximal_refusals_after(p: FailuresModel, trace: Iterable[Event]) -> tuple[frozenset[Event], ...]:
    state = walk_model(p, trace)
    sigma_tick = p.universe | {TICK}
    return tuple(sigma_tick - acceptance for acceptance in p.acceptances(state))


def traces_upto(p: FailuresModel, depth: int) -> frozenset[Trace]:
    traces = {()}
    frontier = [((), p.root)]
    for _ in range(depth):
        following = []
        for trace, state in frontier:
            for event in p.initials(state):
                extended = trace + (event,)
                traces.add(extended)
                following.append((extended, p.after(state, event)))
        frontier = following
    return frozenset(traces)


def _subsets(events: frozenset[Event]):
    ordered = canonical(events)
    for size in range(len(ordered) + 1):
        for combo in itertools.combinations(ordered, size):
            yield frozenset(combo)


def failures_upto(p: FailuresModel, depth: int, events: frozenset[Event] | None = None) -> frozenset[Failure]:
    """Stable failures with traces up to ``depth``, refusals drawn from ``events`` and ✓.

    Exponential in the size of ``events``; meant for small test alphabets.
    """
    scope = (p.universe if events is None else events) | {TICK}
    result: set[Failure] = set()
    for trace in traces_upto(p, depth):
        state = walk_model(p, trace)
        refusals: set[frozenset[Event]] = set()
        for acceptance in p.acceptances(state):
            refusals.update(_subsets(scope - acceptance))
        result.update(Failure(trace, refusal) for refusal in refusals)
    logger.debug("decoded %d failures up to depth %d", len(result), depth)
    return frozenset(result)


def describe_failure(failure: Failure) -> str:
    refused = ", ".join(str(e) for e in canonical(failure.refusal))
    return f"({format_trace(failure.trace)}, {{{refused}}})"
