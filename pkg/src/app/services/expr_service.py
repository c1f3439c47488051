import logging
from dataclasses import dataclass
from typing import Mapping

from src.app.entities import Event, flatten, format_value
from src.app.syntax import (
    BinOp,
    BoolLit,
    Call,
    ChanSet,
    DotField,
    Dotted,
    InField,
    Lit,
    Name,
    Node,
    Num,
    Op,
    OutField,
    SetEnum,
    SetRange,
    Spec,
    UnOp,
)
from src.exceptions import TypeMismatch, UnboundName

logger = logging.getLogger(__name__)

Env = Mapping[str, object]
Binding = tuple[tuple[str, object], ...]

BUILTINS = frozenset({"union", "inter", "diff", "card", "empty", "member"})


@dataclass(frozen=True)
class ChannelRef:
    """A channel applied to a payload prefix that does not yet name one event."""

    channel: str
    prefix: tuple = ()

    def __str__(self) -> str:
        return ".".join([self.channel, *(format_value(v) for v in self.prefix)])


def _member(value, allowed) -> bool:
    if not isinstance(allowed, frozenset):
        raise TypeMismatch(f"{format_value(allowed)} is not a set")
    if value in allowed:
        return True
    flat = flatten(value)
    return any(flatten(a) == flat for a in allowed)


class Evaluator:
    """Evaluates value expressions, event sets, renamings and prefix patterns."""

    def __init__(self, spec: Spec):
        self._spec = spec
        self._catalogue = spec.catalogue

    # ---------- values ----------

    def value(self, n: Node, env: Env | None = None):
        env = env or {}
        match n:
            case Num(value=v) | BoolLit(value=v) | Lit(value=v):
                return v
            case Name(id=ident):
                return self._name(ident, env)
            case Dotted():
                return self._dotted(n, env)
            case BinOp(op=op, left=left, right=right):
                return self._binop(op, left, right, env)
            case UnOp(op=Op.NOT, operand=operand):
                return not self.boolean(operand, env)
            case UnOp(op=Op.NEG, operand=operand):
                return -self.integer(operand, env)
            case SetRange(lo=lo, hi=hi):
                return frozenset(range(self.integer(lo, env), self.integer(hi, env) + 1))
            case SetEnum(items=items):
                return frozenset(self._set_item(i, env) for i in items)
            case ChanSet(items=items):
                return frozenset().union(*(self.events(i, env) for i in items))
            case Call(name=name, args=args):
                return self._call(name, args, env)
        raise TypeMismatch(f"{type(n).__name__} is not a value expression")

    def integer(self, n: Node, env: Env | None = None) -> int:
        v = self.value(n, env)
        if isinstance(v, bool) or not isinstance(v, int):
            raise TypeMismatch(f"{format_value(v)} is not an integer")
        return v

    def boolean(self, n: Node, env: Env | None = None) -> bool:
        v = self.value(n, env)
        if not isinstance(v, bool):
            raise TypeMismatch(f"{format_value(v)} is not a boolean")
        return v

    def set_value(self, n: Node, env: Env | None = None) -> frozenset:
        v = self.value(n, env)
        if isinstance(v, ChannelRef):
            return frozenset(self._catalogue.channel_events(v.channel, v.prefix))
        if not isinstance(v, frozenset):
            raise TypeMismatch(f"{format_value(v)} is not a set")
        return v

    def events(self, n: Node, env: Env | None = None) -> frozenset[Event]:
        """Coerce an expression to the set of events it denotes."""
        return self._as_events(self.value(n, env))

    def _as_events(self, v) -> frozenset[Event]:
        if isinstance(v, Event):
            return frozenset({v})
        if isinstance(v, ChannelRef):
            return frozenset(self._catalogue.channel_events(v.channel, v.prefix))
        if isinstance(v, frozenset):
            return frozenset().union(*(self._as_events(item) for item in v))
        raise TypeMismatch(f"{format_value(v)} does not denote events")

    def _set_item(self, n: Node, env: Env):
        v = self.value(n, env)
        if isinstance(v, ChannelRef):
            raise TypeMismatch(f"{v} is not a complete event; use {{| {v} |}}")
        return v

    def _name(self, ident: str, env: Env):
        if ident in env:
            return env[ident]
        spec = self._spec
        if ident in spec.channels:
            return self._close(ChannelRef(ident))
        if ident in spec.types:
            return frozenset(v[0] if len(v) == 1 else v for v in spec.types[ident].values)
        if ident == "Bool":
            return frozenset({False, True})
        if ident == "Events":
            return self._catalogue.universe
        if ident in spec.labels:
            return ident
        raise UnboundName(f"name {ident} is not bound")

    def _head(self, n: Node, env: Env):
        if isinstance(n, Name) and n.id not in env and n.id in self._spec.channels:
            return ChannelRef(n.id)
        v = self.value(n, env)
        if isinstance(v, Event):
            return ChannelRef(v.channel, v.payload)
        return v

    def _close(self, ref: ChannelRef):
        candidates = self._catalogue.channel_events(ref.channel, ref.prefix)
        if not candidates:
            raise TypeMismatch(f"{ref} is not in the payload of channel {ref.channel}")
        if len(candidates) == 1 and candidates[0].payload == ref.prefix:
            return candidates[0]
        return ref

    def _dotted(self, n: Dotted, env: Env):
        head = self._head(n.head, env)
        parts = []
        for f in n.fields:
            if isinstance(f, InField):
                raise TypeMismatch(f"input field ?{f.name} outside a prefix")
            parts.append(self.value(f.expr, env))

        if isinstance(head, ChannelRef):
            prefix = head.prefix
            for part in parts:
                prefix += flatten(part)
            return self._close(ChannelRef(head.channel, prefix))

        if any(isinstance(p, frozenset) for p in parts) or isinstance(head, frozenset):
            # a dotted product of sets, as in v.{1..4}
            products = {()}
            for part in (head, *parts):
                options = part if isinstance(part, frozenset) else (part,)
                products = {p + flatten(o) for p in products for o in options}
            return frozenset(products)

        result = flatten(head)
        for part in parts:
            result += flatten(part)
        return result

    def _binop(self, op: Op, left: Node, right: Node, env: Env):
        if op is Op.AND:
            return self.boolean(left, env) and self.boolean(right, env)
        if op is Op.OR:
            return self.boolean(left, env) or self.boolean(right, env)
        if op in (Op.EQ, Op.NE):
            equal = self.value(left, env) == self.value(right, env)
            return equal if op is Op.EQ else not equal

        a, b = self.integer(left, env), self.integer(right, env)
        match op:
            case Op.ADD:
                return a + b
            case Op.SUB:
                return a - b
            case Op.MUL:
                return a * b
            case Op.DIV | Op.MOD if b == 0:
                raise TypeMismatch("division by zero")
            case Op.DIV:
                return a // b
            case Op.MOD:
                return a % b
            case Op.LT:
                return a < b
            case Op.LE:
                return a <= b
            case Op.GT:
                return a > b
            case Op.GE:
                return a >= b
        raise TypeMismatch(f"unknown operator {op}")

    def _call(self, name: str, args: tuple[Node, ...], env: Env):
        match name, len(args):
            case "union", 2:
                return self.set_value(args[0], env) | self.set_value(args[1], env)
            case "inter", 2:
                return self.set_value(args[0], env) & self.set_value(args[1], env)
            case "diff", 2:
                return self.set_value(args[0], env) - self.set_value(args[1], env)
            case "card", 1:
                return len(self.set_value(args[0], env))
            case "empty", 1:
                return not self.set_value(args[0], env)
            case "member", 2:
                return _member(self.value(args[0], env), self.set_value(args[1], env))
        raise UnboundName(f"{name}/{len(args)} is not a function")

    # ---------- events ----------

    def offers(self, pattern: Node, env: Env | None = None) -> list[tuple[Event, Binding]]:
        """Events a prefix pattern can perform, with the variables each one binds."""
        env = env or {}
        if not isinstance(pattern, Dotted):
            v = self.value(pattern, env)
            if isinstance(v, Event):
                return [(v, ())]
            raise TypeMismatch(f"{format_value(v) if not isinstance(v, ChannelRef) else v} is not an event")

        head = self._head(pattern.head, env)
        if not isinstance(head, ChannelRef):
            raise TypeMismatch(f"{format_value(head)} is not a channel")

        prefix = head.prefix
        fields = list(pattern.fields)
        while fields and not isinstance(fields[0], InField):
            prefix += flatten(self.value(fields.pop(0).expr, env))

        result = []
        for event in self._catalogue.channel_events(head.channel, prefix):
            bound = self._match(event.payload, len(prefix), fields, env)
            if bound is not None:
                result.append((event, bound))

        if not result and not pattern.is_pattern:
            ref = ChannelRef(head.channel, prefix)
            raise TypeMismatch(f"{ref} is not in the payload of channel {head.channel}")
        return result

    def _match(self, payload: tuple, pos: int, fields: list[Node], env: Env) -> Binding | None:
        local = dict(env)
        bound: list[tuple[str, object]] = []
        for index, f in enumerate(fields):
            if isinstance(f, InField):
                if pos >= len(payload):
                    return None
                last = index == len(fields) - 1
                rest = payload[pos:] if last else payload[pos : pos + 1]
                value = rest[0] if len(rest) == 1 else rest
                if f.restrict is not None and not _member(value, self.value(f.restrict, local)):
                    return None
                local[f.name] = value
                bound.append((f.name, value))
                pos += len(rest)
            else:
                assert isinstance(f, (DotField, OutField))
                part = flatten(self.value(f.expr, local))
                if payload[pos : pos + len(part)] != part:
                    return None
                pos += len(part)
        return tuple(bound) if pos == len(payload) else None

    def renaming(self, pairs, env: Env | None = None) -> dict[Event, tuple[Event, ...]]:
        """Relation of a renaming, channel-wise for channel operands."""
        env = env or {}
        relation: dict[Event, list[Event]] = {}
        for source, target in pairs:
            src, dst = self._head(source, env), self._head(target, env)
            if not isinstance(src, ChannelRef) or not isinstance(dst, ChannelRef):
                raise TypeMismatch("renaming relates events or channels")

            for event in self._catalogue.channel_events(src.channel, src.prefix):
                payload = dst.prefix + event.payload[len(src.prefix) :]
                matches = [
                    e for e in self._catalogue.channel_events(dst.channel, payload) if e.payload == payload
                ]
                if not matches:
                    raise TypeMismatch(f"{event} has no image on channel {dst.channel}")
                relation.setdefault(event, []).append(matches[0])
        return {k: tuple(v) for k, v in relation.items()}

