"""Abstract syntax of the I/O process language and the resolved Spec."""

from dataclasses import dataclass, field, fields, replace
from enum import StrEnum
from functools import cache

from src.app.entities import ChannelDecl, EventCatalogue, ValueType


class Node:
    """Base of all syntax nodes: structural equality with a cached hash."""

    def _key(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self) if f.compare)

    def __hash__(self) -> int:
        cached = self.__dict__.get("_hash")
        if cached is None:
            cached = hash((type(self).__name__, self._key()))
            object.__setattr__(self, "_hash", cached)
        return cached

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if type(self) is not type(other) or hash(self) != hash(other):
            return False
        return self._key() == other._key()


def node(cls):
    return dataclass(frozen=True, eq=False)(cls)


# ---------- Values ----------


@node
class Num(Node):
    value: int


@node
class BoolLit(Node):
    value: bool


@node
class Name(Node):
    id: str
    line: int = field(default=0, compare=False, repr=False)
    column: int = field(default=0, compare=False, repr=False)


@node
class Call(Node):
    name: str
    args: tuple[Node, ...]
    line: int = field(default=0, compare=False, repr=False)
    column: int = field(default=0, compare=False, repr=False)


@node
class Lit(Node):
    """A closed value (event, set of events, atom) built programmatically."""

    value: object


@node
class DotField(Node):
    expr: Node


@node
class InField(Node):
    name: str
    restrict: Node | None = None


@node
class OutField(Node):
    expr: Node


@node
class Dotted(Node):
    head: Node
    fields: tuple[Node, ...]

    @property
    def is_pattern(self) -> bool:
        return any(isinstance(f, InField) for f in self.fields)


class Op(StrEnum):
    ADD = "+"
    SUB = "-"
    MUL = "*"
    DIV = "/"
    MOD = "%"
    EQ = "=="
    NE = "!="
    LT = "<"
    LE = "<="
    GT = ">"
    GE = ">="
    AND = "and"
    OR = "or"
    NOT = "not"
    NEG = "neg"


@node
class BinOp(Node):
    op: Op
    left: Node
    right: Node


@node
class UnOp(Node):
    op: Op
    operand: Node


@node
class SetRange(Node):
    lo: Node
    hi: Node


@node
class SetEnum(Node):
    items: tuple[Node, ...]


@node
class ChanSet(Node):
    items: tuple[Node, ...]


# ---------- Processes ----------


@node
class Stop(Node):
    pass


@node
class Skip(Node):
    pass


@node
class Prefix(Node):
    pattern: Node
    body: Node


@node
class Guard(Node):
    cond: Node
    body: Node


@node
class IfThenElse(Node):
    cond: Node
    then: Node
    orelse: Node


@node
class ExtChoice(Node):
    left: Node
    right: Node


@node
class IntChoice(Node):
    left: Node
    right: Node


@node
class Seq(Node):
    left: Node
    right: Node


@node
class Hide(Node):
    body: Node
    events: Node


@node
class Rename(Node):
    body: Node
    pairs: tuple[tuple[Node, Node], ...]


@node
class ParSync(Node):
    left: Node
    sync: Node
    right: Node


@node
class Interleave(Node):
    left: Node
    right: Node


@node
class ReplExtChoice(Node):
    var: str
    domain: Node
    body: Node


@node
class ReplIntChoice(Node):
    var: str
    domain: Node
    body: Node


@node
class ReplInterleave(Node):
    var: str
    domain: Node
    body: Node


@node
class ReplParSync(Node):
    sync: Node
    var: str
    domain: Node
    body: Node


@node
class Ref(Node):
    name: str
    args: tuple[Node, ...] = ()


REPLICATED = (ReplExtChoice, ReplIntChoice, ReplInterleave, ReplParSync)
BINARY = (ExtChoice, IntChoice, Seq, Interleave)


def children(n: Node) -> tuple[Node, ...]:
    """Direct sub-nodes, in field order."""
    out: list[Node] = []
    for f in fields(n):
        if not f.compare:
            continue
        value = getattr(n, f.name)
        if isinstance(value, Node):
            out.append(value)
        elif isinstance(value, tuple):
            for item in value:
                if isinstance(item, Node):
                    out.append(item)
                elif isinstance(item, tuple):
                    out.extend(i for i in item if isinstance(i, Node))
    return tuple(out)


@cache
def free_vars(n: Node) -> frozenset[str]:
    """Names occurring free in ``n``; includes global names, callers intersect."""
    match n:
        case Name(id=ident):
            return frozenset({ident})
        case Call(name=name, args=args):
            return frozenset({name}).union(*(free_vars(a) for a in args))
        case Dotted(head=head, fields=flds):
            result = set(free_vars(head))
            for f in flds:
                if isinstance(f, InField):
                    if f.restrict is not None:
                        result |= free_vars(f.restrict)
                else:
                    result |= free_vars(f)
            return frozenset(result)
        case Prefix(pattern=pattern, body=body):
            return free_vars(pattern) | (free_vars(body) - pattern_binders(pattern))
        case ReplExtChoice() | ReplIntChoice() | ReplInterleave():
            return free_vars(n.domain) | (free_vars(n.body) - {n.var})
        case ReplParSync(sync=sync, var=var, domain=domain, body=body):
            return free_vars(sync) | free_vars(domain) | (free_vars(body) - {var})
        case Ref(name=name, args=args):
            return frozenset().union(*(free_vars(a) for a in args))
        case _:
            return frozenset().union(*(free_vars(c) for c in children(n)))


def pattern_binders(pattern: Node) -> frozenset[str]:
    if isinstance(pattern, Dotted):
        return frozenset(f.name for f in pattern.fields if isinstance(f, InField))
    return frozenset()


# ---------- Declarations ----------


class AssertionKind(StrEnum):
    FAILURES_REFINE = "FAILURES_REFINE"
    EQUIVALENT = "EQUIVALENT"
    DEADLOCK_FREE = "DEADLOCK_FREE"
    DIVERGENCE_FREE = "DIVERGENCE_FREE"
    IO_PROCESS = "IO_PROCESS"
    CVG = "CVG"
    ECVG = "ECVG"
    BRIC_REFINE = "BRIC_REFINE"
    INHERIT_CVG = "INHERIT_CVG"
    INHERIT_ECVG = "INHERIT_ECVG"
    DECOUPLED = "DECOUPLED"


ASSERTION_ARITY = {
    AssertionKind.FAILURES_REFINE: 2,
    AssertionKind.EQUIVALENT: 2,
    AssertionKind.DEADLOCK_FREE: 1,
    AssertionKind.DIVERGENCE_FREE: 1,
    AssertionKind.IO_PROCESS: 1,
    AssertionKind.CVG: 2,
    AssertionKind.ECVG: 2,
    AssertionKind.BRIC_REFINE: 2,
    AssertionKind.INHERIT_CVG: 2,
    AssertionKind.INHERIT_ECVG: 2,
    AssertionKind.DECOUPLED: 3,
}


@dataclass(frozen=True)
class Assertion:
    id: int
    kind: AssertionKind
    operands: tuple[Node, ...]
    options: tuple[tuple[str, Node], ...] = ()
    text: str = field(default="", compare=False)
    line: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if len(self.operands) != ASSERTION_ARITY[self.kind]:
            raise ValueError(f"{self.kind} takes {ASSERTION_ARITY[self.kind]} operands")


@dataclass(frozen=True)
class ProcessDef:
    name: str
    params: tuple[str, ...]
    body: Node
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ContractDecl:
    name: str
    behaviour: Node | None
    channels: tuple[tuple[str, Node], ...] = ()
    composition: Node | None = None
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class TypeDecl:
    keyword: str  # datatype, subtype or nametype
    name: str
    alternatives: tuple[Node, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ChannelsDecl:
    names: tuple[str, ...]
    type_expr: Node | None
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Spec:
    declarations: tuple = ()
    types: dict[str, ValueType] = field(default_factory=dict)
    labels: dict[str, str] = field(default_factory=dict)
    channels: dict[str, ChannelDecl] = field(default_factory=dict)
    processes: dict[str, ProcessDef] = field(default_factory=dict)
    contracts: dict[str, ContractDecl] = field(default_factory=dict)
    assertions: tuple[Assertion, ...] = ()
    catalogue: EventCatalogue = field(default_factory=EventCatalogue)
    source: str | None = None

    def extend(self, definitions) -> "Spec":
        """A copy of this spec with extra (generated) process definitions."""
        extra = {d.name: d for d in definitions}
        if not extra:
            return self
        return replace(self, processes={**self.processes, **extra})

    def event(self, name: str):
        return self.catalogue.lookup(name)

    def process(self, name: str, *args) -> Node:
        return Ref(name, tuple(Lit(a) for a in args))
