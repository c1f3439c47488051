from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Iterable, Iterator, Protocol

from src import config
from src.exceptions import InvalidContract, NoSuchTrace

Atom = int | str | bool
Trace = tuple["Event", ...]

# ---------- Value Objects ----------


class Direction(StrEnum):
    IN = "in"
    OUT = "out"
    PLAIN = "plain"


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ".".join(format_value(part) for part in value)
    if isinstance(value, frozenset):
        return "{" + ", ".join(format_value(v) for v in sorted(value, key=value_key)) + "}"
    return str(value)


def value_key(value) -> tuple:
    """Total order over values of mixed kinds, events first."""
    if isinstance(value, Event):
        return (0, value.rank)
    if isinstance(value, bool):
        return (2, int(value))
    if isinstance(value, int):
        return (1, value)
    if isinstance(value, str):
        return (3, value)
    if isinstance(value, tuple):
        return (4, tuple(value_key(v) for v in value))
    if isinstance(value, frozenset):
        return (5, tuple(sorted(value_key(v) for v in value)))
    return (6, repr(value))


def flatten(value) -> tuple:
    """Dotted view of a value: atoms become one-element tuples."""
    return value if isinstance(value, tuple) else (value,)


def unflatten(parts: tuple):
    return parts[0] if len(parts) == 1 else parts


@dataclass(frozen=True)
class Event:
    channel: str
    direction: Direction
    value: tuple = ()
    rank: int = field(default=0, compare=False, repr=False)

    @property
    def payload(self) -> tuple:
        """Full dotted payload, direction tag included."""
        if self.direction is Direction.PLAIN:
            return self.value
        return (self.direction.value,) + self.value

    @property
    def is_marker(self) -> bool:
        return self.channel.startswith("$")

    def __lt__(self, other: "Event") -> bool:
        return self.rank < other.rank

    def __str__(self) -> str:
        if self is TAU or self == TAU:
            return "τ"
        if self == TICK:
            return "✓"
        parts = [self.channel.lstrip("$")]
        parts.extend(format_value(v) for v in self.payload)
        return ".".join(parts)


MARKER_RANK = 1 << 60

TAU = Event("$tau", Direction.PLAIN, (), rank=-1)
TICK = Event("$tick", Direction.PLAIN, (), rank=MARKER_RANK + 100)
START = Event("$start", Direction.PLAIN, (), rank=MARKER_RANK)
END = Event("$end", Direction.PLAIN, (), rank=MARKER_RANK + 1)
IN_ACK = Event("$in_ack", Direction.PLAIN, (), rank=MARKER_RANK + 2)
IN_RDT = Event("$in_rdt", Direction.PLAIN, (), rank=MARKER_RANK + 3)
MARKERS = frozenset({END, IN_ACK, IN_RDT})


def canonical(events: Iterable[Event]) -> tuple[Event, ...]:
    return tuple(sorted(events, key=lambda e: e.rank))


def format_trace(trace: Iterable[Event]) -> str:
    return "⟨" + ", ".join(str(e) for e in trace) + "⟩"


class TypeKind(StrEnum):
    INT_RANGE = "int-range"
    ENUM = "enum"
    PRODUCT = "product"
    UNION = "union"


@dataclass(frozen=True)
class ValueType:
    name: str
    kind: TypeKind
    values: tuple[tuple, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError(f"type {self.name} denotes an empty value set")

    def __contains__(self, value) -> bool:
        return flatten(value) in self.members

    @property
    def members(self) -> frozenset[tuple]:
        return frozenset(self.values)


@dataclass(frozen=True)
class ChannelDecl:
    name: str
    payload: ValueType | None
    io_discipline: bool
    events: tuple[Event, ...] = ()

    def events_with_prefix(self, prefix: tuple) -> tuple[Event, ...]:
        n = len(prefix)
        return tuple(e for e in self.events if e.payload[:n] == prefix)

    @property
    def inputs(self) -> frozenset[Event]:
        return frozenset(e for e in self.events if e.direction is Direction.IN)

    @property
    def outputs(self) -> frozenset[Event]:
        return frozenset(e for e in self.events if e.direction is Direction.OUT)


class EventCatalogue:
    """All declared events in canonical order, with lookup by printed name."""

    def __init__(self, channels: Iterable[ChannelDecl] = ()) -> None:
        self._channels: dict[str, ChannelDecl] = {}
        self._by_name: dict[str, Event] = {}
        self._events: list[Event] = []
        for channel in channels:
            self._channels[channel.name] = channel
            for event in channel.events:
                self._events.append(event)
                self._by_name[str(event)] = event
        self.universe: frozenset[Event] = frozenset(self._events)

    @classmethod
    def from_events(cls, events: Iterable[Event]) -> "EventCatalogue":
        """Catalogue of exactly ``events``, grouped by channel, ranks kept."""
        grouped: dict[str, list[Event]] = {}
        for event in canonical(e for e in events if not e.is_marker):
            grouped.setdefault(event.channel, []).append(event)
        return cls(
            ChannelDecl(name, None, all(e.direction is not Direction.PLAIN for e in group), tuple(group))
            for name, group in grouped.items()
        )

    def __iter__(self) -> Iterator[Event]:
        return iter(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def __contains__(self, event: Event) -> bool:
        return event in self.universe

    @property
    def channels(self) -> dict[str, ChannelDecl]:
        return dict(self._channels)

    def lookup(self, name: str) -> Event:
        event = self._by_name.get(name)
        if event is None:
            raise KeyError(name)
        return event

    def channel_events(self, channel: str, prefix: tuple = ()) -> tuple[Event, ...]:
        decl = self._channels.get(channel)
        if decl is None:
            return ()
        return decl.events_with_prefix(prefix)

    @property
    def inputs(self) -> frozenset[Event]:
        return frozenset(e for e in self._events if e.direction is Direction.IN)

    @property
    def outputs(self) -> frozenset[Event]:
        return frozenset(e for e in self._events if e.direction is Direction.OUT)


def build_channel(name: str, payload: ValueType | None, first_rank: int) -> ChannelDecl:
    """Enumerate the events of a channel: inputs, then outputs, then plain."""
    if payload is None:
        return ChannelDecl(name, None, False, (Event(name, Direction.PLAIN, (), first_rank),))

    io = all(v and v[0] in ("in", "out") for v in payload.values)
    ordered: list[Event] = []
    if io:
        for direction in (Direction.IN, Direction.OUT):
            for value in payload.values:
                if value[0] == direction.value:
                    ordered.append(Event(name, direction, value[1:]))
    else:
        ordered = [Event(name, Direction.PLAIN, value) for value in payload.values]

    ranked = tuple(replace(e, rank=first_rank + i) for i, e in enumerate(ordered))
    return ChannelDecl(name, payload, io, ranked)


# ---------- Automata ----------


class FailuresModel(Protocol):
    """Deterministic failures automaton, eager or computed on demand."""

    universe: frozenset[Event]
    alphabet: frozenset[Event]

    @property
    def root(self): ...

    def initials(self, state) -> tuple[Event, ...]: ...

    def after(self, state, event: Event): ...

    def acceptances(self, state) -> tuple[frozenset[Event], ...]: ...

    def can_terminate(self, state) -> bool: ...


@dataclass(frozen=True)
class Lts:
    root: int
    transitions: tuple[tuple[tuple[Event, int], ...], ...]
    alphabet: frozenset[Event]
    universe: frozenset[Event]
    labels: tuple[str, ...] = ()

    @property
    def n_states(self) -> int:
        return len(self.transitions)

    def edges(self) -> Iterator[tuple[int, Event, int]]:
        for source, outgoing in enumerate(self.transitions):
            for label, target in outgoing:
                yield source, label, target


@dataclass(frozen=True)
class NormLts:
    root: int
    successors: tuple[tuple[tuple[Event, int], ...], ...]
    acceptance_sets: tuple[tuple[frozenset[Event], ...], ...]
    terminating: tuple[bool, ...]
    alphabet: frozenset[Event]
    universe: frozenset[Event]

    @property
    def n_states(self) -> int:
        return len(self.successors)

    def initials(self, state: int) -> tuple[Event, ...]:
        return tuple(e for e, _ in self.successors[state])

    def after(self, state: int, event: Event) -> int | None:
        for label, target in self.successors[state]:
            if label == event:
                return target
        return None

    def acceptances(self, state: int) -> tuple[frozenset[Event], ...]:
        return self.acceptance_sets[state]

    def can_terminate(self, state: int) -> bool:
        return self.terminating[state]

    def walk(self, trace: Iterable[Event]) -> int:
        state = self.root
        walked: list[Event] = []
        for event in trace:
            walked.append(event)
            state = self.after(state, event)
            if state is None:
                raise NoSuchTrace(f"{format_trace(walked)} is not a trace of the process")
        return state

    def refusals(self, state: int) -> tuple[frozenset[Event], ...]:
        """Maximal refusals, the complements of the minimal acceptances."""
        sigma_tick = self.universe | {TICK}
        return tuple(sigma_tick - a for a in self.acceptance_sets[state])


def walk_model(model: FailuresModel, trace: Iterable[Event]):
    state = model.root
    walked: list[Event] = []
    for event in trace:
        walked.append(event)
        state = model.after(state, event)
        if state is None:
            raise NoSuchTrace(f"{format_trace(walked)} is not a trace of the process")
    return state


def minimal_sets(sets: Iterable[frozenset]) -> tuple[frozenset, ...]:
    """Antichain of the inclusion-minimal sets, in a stable order."""
    unique = sorted(set(sets), key=lambda s: (len(s), sorted(e.rank for e in s)))
    kept: list[frozenset] = []
    for candidate in unique:
        if not any(k <= candidate for k in kept):
            kept.append(candidate)
    return tuple(kept)


# ---------- Verdicts ----------


class Status(StrEnum):
    PASS = "PASS"
    FAIL = "FAIL"
    ERROR = "ERROR"


@dataclass(frozen=True)
class Failure:
    trace: Trace
    refusal: frozenset[Event]


@dataclass(frozen=True)
class Counterexample:
    trace: Trace
    refusal: frozenset[Event] | None = None
    event: Event | None = None
    detail: str = ""
    tags: tuple[str, ...] = ()

    def render(self, universe: frozenset[Event] | None = None) -> list[str]:
        lines = [f"trace {format_trace(self.trace)}"]
        if self.event is not None:
            lines.append(f"then {self.event}")
        if self.refusal is not None:
            if universe is not None and self.refusal >= universe | {TICK}:
                lines.append("refuses Σ✓")
            else:
                lines.append("refuses {" + ", ".join(str(e) for e in canonical(self.refusal)) + "}")
        if self.detail:
            lines.append(self.detail)
        return lines


@dataclass(frozen=True)
class Stats:
    states_explored: int = 0
    elapsed: float = 0.0


@dataclass(frozen=True)
class Verdict:
    status: Status
    counterexample: Counterexample | None = None
    stats: Stats = field(default_factory=Stats)
    notes: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return self.status is Status.PASS

    @classmethod
    def ok(cls, explored: int = 0, notes: tuple[str, ...] = ()) -> "Verdict":
        return cls(Status.PASS, None, Stats(explored), notes)

    @classmethod
    def fail(cls, witness: Counterexample, explored: int = 0, notes: tuple[str, ...] = ()) -> "Verdict":
        return cls(Status.FAIL, witness, Stats(explored), notes)


@dataclass(frozen=True)
class IoReport:
    conditions: tuple[Verdict, Verdict, Verdict, Verdict, Verdict]

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.conditions)

    def first_failure(self) -> tuple[int, Verdict] | None:
        for number, verdict in enumerate(self.conditions, start=1):
            if not verdict.passed:
                return number, verdict
        return None


# ---------- Serialization ----------


@dataclass(frozen=True)
class SerialEntry:
    ev: Event
    a_ev: tuple[Event, ...]
    level: int

    def __str__(self) -> str:
        offers = ", ".join(str(e) for e in self.a_ev)
        return f"({self.ev}, <{offers}>, {self.level})"


@dataclass(frozen=True)
class SerialProcess:
    entries: tuple[SerialEntry, ...]
    inputs: frozenset[Event]
    outputs: frozenset[Event]
    source_depth: int

    def __post_init__(self) -> None:
        if not self.entries or self.entries[0].ev != START or self.entries[0].level != 0:
            raise ValueError("a serialized process starts with (start, _, 0)")


# ---------- Convergence ----------


class Relation(StrEnum):
    CVG = "cvg"
    ECVG = "ecvg"


class Method(StrEnum):
    GLB_REFINEMENT = "GLB_REFINEMENT"
    BRUTE_FORCE = "BRUTE_FORCE"


@dataclass(frozen=True)
class GlbConfig:
    gap: int
    inputs: frozenset[Event]
    all_events: frozenset[Event]
    marker_events: frozenset[Event] = MARKERS

    def __post_init__(self) -> None:
        if self.gap < 0:
            raise ValueError("gap must be non-negative")
        if self.marker_events & self.all_events:
            raise ValueError("marker events overlap declared events")


@dataclass(frozen=True)
class ConvergenceVerdict:
    relation: Relation
    method: Method
    status: Status
    counterexample: Counterexample | None = None
    stats: Stats = field(default_factory=Stats)
    notes: tuple[str, ...] = ()
    gap_limited: bool = False

    @property
    def passed(self) -> bool:
        return self.status is Status.PASS


# ---------- Entities ----------


@dataclass(frozen=True)
class Interface:
    name: str
    values: frozenset[tuple]

    def events_on(self, channel: ChannelDecl) -> frozenset[Event]:
        return frozenset(e for e in channel.events if e.payload in self.values)


@dataclass(frozen=True)
class BufferSpec:
    capacity: int
    l_map: tuple[tuple[Event, Event], ...]
    r_map: tuple[tuple[Event, Event], ...]

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise InvalidContract("buffer capacity must be positive")
        for mapping in (self.l_map, self.r_map):
            targets = [b for _, b in mapping]
            if len(set(targets)) != len(targets) or len({a for a, _ in mapping}) != len(mapping):
                raise InvalidContract("buffer renaming must be injective")
            for a, b in mapping:
                if a.direction is not Direction.OUT or b.direction is not Direction.IN:
                    raise InvalidContract(f"buffer maps {a} to {b}: expected output to input")


@dataclass(frozen=True)
class Contract:
    name: str
    behaviour: object
    channels: tuple[str, ...]
    r_map: dict[str, Interface]
    definitions: tuple = ()
    atomic: bool = True
    notes: tuple[str, ...] = ()

    @property
    def interfaces(self) -> frozenset[Interface]:
        return frozenset(self.r_map.values())


@dataclass(frozen=True)
class ContractDenotation:
    overall: NormLts
    per_channel: dict[str, NormLts]


@dataclass(frozen=True)
class CheckOptions:
    max_states: int = 100_000
    gap: int | None = None
    buffer_size: int = 1
    report: str = "text"
    oracle: bool = False
    seed: int = 0
    workers: int = 4

    @classmethod
    def from_config(cls) -> "CheckOptions":
        return cls(
            max_states=config.MAX_STATES,
            gap=config.GAP,
            buffer_size=config.BUFFER_SIZE,
            report=config.REPORT,
            oracle=config.ORACLE,
            seed=config.SEED,
            workers=config.WORKERS,
        )

    def with_overrides(self, **overrides) -> "CheckOptions":
        aliases = {"buffer": "buffer_size", "budget": "max_states"}
        known = {aliases.get(k, k): v for k, v in overrides.items() if v is not None}
        return replace(self, **known)


# ---------- Reports ----------


@dataclass(frozen=True)
class CheckRecord:
    id: int
    kind: str
    text: str
    status: Status
    method: Method | None = None
    counterexample: Counterexample | None = None
    stats: Stats = field(default_factory=Stats)
    notes: tuple[str, ...] = ()
    diagnostics: tuple[str, ...] = ()
    source: str | None = None
    line: int = 0
    universe: frozenset[Event] = field(default=frozenset(), compare=False, repr=False)

    @property
    def witness(self) -> list[str]:
        if self.counterexample is None:
            return []
        return self.counterexample.render(self.universe or None)


@dataclass(frozen=True)
class Report:
    records: tuple[CheckRecord, ...]
    config: dict = field(default_factory=dict)
    tool: str = "bricc"
    version: str = "0.1.0"

    @property
    def summary(self) -> dict[str, int]:
        counts = {status.value: 0 for status in Status}
        for record in self.records:
            counts[record.status.value] += 1
        return counts

    @property
    def exit_code(self) -> int:
        statuses = {record.status for record in self.records}
        if Status.ERROR in statuses:
            return 2
        if Status.FAIL in statuses:
            return 1
        return 0

    def record(self, assertion_id: int) -> CheckRecord:
        for record in self.records:
            if record.id == assertion_id:
                return record
        raise KeyError(assertion_id)
