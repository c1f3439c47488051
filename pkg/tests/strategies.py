"""Generators of process terms and of I/O process pairs for the property suites"""
from dataclasses import dataclass

from hypothesis import strategies as st

# ========== Process Terms ==========


def process_trees(events: list[str], max_leaves: int = 6):
    """Finite terms over every process operator, as nested tuples"""
    event = st.sampled_from(events)
    event_sets = st.lists(event, min_size=1, max_size=2, unique=True).map(lambda es: tuple(sorted(es)))
    return st.recursive(
        st.sampled_from([("stop",), ("skip",)]),
        lambda inner: st.one_of(
            st.tuples(st.just("prefix"), event, inner),
            st.tuples(st.just("ext"), inner, inner),
            st.tuples(st.just("int"), inner, inner),
            st.tuples(st.just("seq"), inner, inner),
            st.tuples(st.just("inter"), inner, inner),
            st.tuples(st.just("par"), inner, event_sets, inner),
            st.tuples(st.just("hide"), inner, event_sets),
            st.tuples(st.just("rename"), inner, st.tuples(event, event)),
        ),
        max_leaves=max_leaves,
    )


def render_tree(tree: tuple) -> str:
    match tree:
        case ("stop",):
            return "STOP"
        case ("skip",):
            return "SKIP"
        case ("prefix", event, p):
            return f"{event} -> ({render_tree(p)})"
        case ("ext", p, q):
            return f"({render_tree(p)}) [] ({render_tree(q)})"
        case ("int", p, q):
            return f"({render_tree(p)}) |~| ({render_tree(q)})"
        case ("seq", p, q):
            return f"({render_tree(p)}) ; ({render_tree(q)})"
        case ("inter", p, q):
            return f"({render_tree(p)}) ||| ({render_tree(q)})"
        case ("par", p, sync, q):
            return f"({render_tree(p)}) [| {{{', '.join(sync)}}} |] ({render_tree(q)})"
        case ("hide", p, hidden):
            return f"({render_tree(p)}) \\ {{{', '.join(hidden)}}}"
        case ("rename", p, (source, target)):
            return f"({render_tree(p)})[[{source} <- {target}]]"
    raise ValueError(f"not a process term: {tree!r}")


# ========== I/O Process Shapes ==========

# inputs arrive on c and outputs leave on d
IO_PAIR_HEADER = """
datatype VAL = v.{1..3}
datatype IO = in.VAL | out.VAL
channel c, d, w, z : IO
"""

INPUTS = ("c.in.v.1", "c.in.v.2", "c.in.v.3")
OUTPUTS = ("d.out.v.1", "d.out.v.2", "d.out.v.3")


@dataclass(frozen=True)
class Outputs:
    """Internal choice of outputs, each returning to the root"""

    events: tuple[str, ...]


@dataclass(frozen=True)
class Run:
    """Fixed sequence of events returning to the root"""

    events: tuple[str, ...]


@dataclass(frozen=True)
class Inputs:
    """External choice of inputs"""

    branches: tuple[tuple[str, "Inputs | Outputs | Run"], ...]


def _outputs():
    return st.lists(st.sampled_from(OUTPUTS), min_size=1, max_size=2, unique=True).map(
        lambda evs: Outputs(tuple(sorted(evs)))
    )


def _inputs(child):
    return st.lists(
        st.tuples(st.sampled_from(INPUTS), child), min_size=1, max_size=2, unique_by=lambda b: b[0]
    ).map(lambda branches: Inputs(tuple(branches)))


# a root offering inputs, each answered directly or after a second input
io_shapes = _inputs(st.one_of(_outputs(), _inputs(_outputs())))


def render_io(shape, name: str) -> str:
    match shape:
        case Outputs(events=events):
            return " |~| ".join(f"{o} -> {name}" for o in events)
        case Run(events=events):
            return " -> ".join(events) + f" -> {name}"
        case Inputs(branches=branches):
            return " [] ".join(f"{i} -> ({render_io(child, name)})" for i, child in branches)
    raise ValueError(f"not a shape: {shape!r}")


def _output_paths(shape, path: tuple[int, ...] = ()):
    match shape:
        case Outputs():
            yield path
        case Inputs(branches=branches):
            for index, (_, child) in enumerate(branches):
                yield from _output_paths(child, path + (index,))


def _at(shape, path: tuple[int, ...]):
    for index in path:
        shape = shape.branches[index][1]
    return shape


def _replace(shape, path: tuple[int, ...], node):
    if not path:
        return node
    head, rest = path[0], path[1:]
    branches = list(shape.branches)
    event, child = branches[head]
    branches[head] = (event, _replace(child, rest, node))
    return Inputs(tuple(branches))


@st.composite
def pruned(draw, shape):
    """Same shape with fewer outputs to choose from: a refinement"""
    match shape:
        case Outputs(events=events):
            kept = draw(st.lists(st.sampled_from(events), min_size=1, unique=True))
            return Outputs(tuple(sorted(kept)))
        case Inputs(branches=branches):
            return Inputs(tuple((i, draw(pruned(child))) for i, child in branches))
    return shape


@st.composite
def extended(draw, shape):
    """A new input inserted before one of the outputs"""
    path = draw(st.sampled_from(list(_output_paths(shape))))
    node = _at(shape, path)
    new_input = draw(st.sampled_from(INPUTS))
    output = draw(st.sampled_from(node.events))
    return _replace(shape, path, Inputs(((new_input, Outputs((output,))),)))


@st.composite
def with_new_output(draw, shape):
    """An output the original never offers at that point"""
    path = draw(st.sampled_from(list(_output_paths(shape))))
    node = _at(shape, path)
    fresh = [o for o in OUTPUTS if o not in node.events]
    if not fresh:
        return shape
    return _replace(shape, path, Outputs(tuple(sorted(node.events + (draw(st.sampled_from(fresh)),)))))


@st.composite
def excursion(draw, shape):
    """A new input, then a new output, then one of the original outputs"""
    path = draw(st.sampled_from(list(_output_paths(shape))))
    node = _at(shape, path)
    fresh = [o for o in OUTPUTS if o not in node.events]
    if not fresh:
        return draw(extended(shape))
    new_input = draw(st.sampled_from(INPUTS))
    events = (draw(st.sampled_from(fresh)), draw(st.sampled_from(node.events)))
    return _replace(shape, path, Inputs(((new_input, Run(events)),)))


def variants(shape):
    return st.one_of(
        st.just(shape), pruned(shape), extended(shape), with_new_output(shape), excursion(shape)
    )


# an original I/O process together with a candidate replacement of it
io_pairs = io_shapes.flatmap(lambda shape: st.tuples(st.just(shape), variants(shape)))


def io_script(original, replacement) -> str:
    """Script defining A and B with a contract each over c and d"""
    lines = [IO_PAIR_HEADER]
    for name, shape in (("A", original), ("B", replacement)):
        lines.append(f"{name} = {render_io(shape, name)}")
        lines.append(f"contract Ctr_{name} {{ behaviour {name}; channel c : IO; channel d : IO; }}")
    lines.append("SINK = z.in?x -> w.out!x -> SINK")
    lines.append("contract Ctr_SINK { behaviour SINK; channel z : IO; channel w : IO; }")
    return "\n".join(lines) + "\n"
