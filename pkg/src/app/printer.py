"""Pretty printer producing text the parser reads back to the same syntax."""

from src.app.entities import Event, format_value
from src.app.syntax import (
    Assertion,
    AssertionKind,
    BinOp,
    BoolLit,
    Call,
    ChannelsDecl,
    ChanSet,
    ContractDecl,
    DotField,
    Dotted,
    ExtChoice,
    Guard,
    Hide,
    IfThenElse,
    InField,
    Interleave,
    IntChoice,
    Lit,
    Name,
    Node,
    Num,
    Op,
    OutField,
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
    SetEnum,
    SetRange,
    Skip,
    Spec,
    Stop,
    TypeDecl,
    UnOp,
)

# binding strength, loosest first; mirrors the grammar levels
EXPR, HIDING, PAR, ICHOICE, ECHOICE, SEQ, PREFIX = range(7)
OR, AND, NOT, CMP, SUM, TERM, UNARY, POSTFIX, DOTTED, PRIMARY = range(7, 17)

_LEVEL = {
    Op.OR: OR,
    Op.AND: AND,
    Op.EQ: CMP,
    Op.NE: CMP,
    Op.LT: CMP,
    Op.LE: CMP,
    Op.GT: CMP,
    Op.GE: CMP,
    Op.ADD: SUM,
    Op.SUB: SUM,
    Op.MUL: TERM,
    Op.DIV: TERM,
    Op.MOD: TERM,
}

_BINARY = {
    ExtChoice: ("[]", ECHOICE),
    IntChoice: ("|~|", ICHOICE),
    Seq: (";", SEQ),
    Interleave: ("|||", PAR),
}

_REPLICATED = {ReplExtChoice: "[]", ReplIntChoice: "|~|", ReplInterleave: "|||"}

_ASSERT_OPS = {
    AssertionKind.FAILURES_REFINE: "[F=",
    AssertionKind.EQUIVALENT: "==F",
    AssertionKind.CVG: "cvg",
    AssertionKind.ECVG: "ecvg",
    AssertionKind.BRIC_REFINE: "[B=",
    AssertionKind.INHERIT_CVG: "<-cvg",
    AssertionKind.INHERIT_ECVG: "<-ecvg",
}

_ASSERT_PROPERTIES = {
    AssertionKind.DEADLOCK_FREE: ":[deadlock free]",
    AssertionKind.DIVERGENCE_FREE: ":[divergence free]",
    AssertionKind.IO_PROCESS: ":[io process]",
}


def _level(n: Node) -> int:
    match n:
        case IfThenElse() | ReplExtChoice() | ReplIntChoice() | ReplInterleave() | ReplParSync():
            return EXPR
        case Hide():
            return HIDING
        case ParSync():
            return PAR
        case ExtChoice() | IntChoice() | Seq() | Interleave():
            return _BINARY[type(n)][1]
        case Prefix() | Guard():
            return PREFIX
        case BinOp(op=op):
            return _LEVEL[op]
        case UnOp(op=Op.NOT):
            return NOT
        case UnOp():
            return UNARY
        case Num(value=v) if v < 0:
            return UNARY
        case Rename():
            return POSTFIX
        case Dotted():
            return DOTTED
    return PRIMARY


def format_expr(n: Node, ctx: int = EXPR) -> str:
    text = _format(n)
    return f"({text})" if _level(n) < ctx else text


def _tail(n: Node) -> str:
    # the continuation of a prefix may be a conditional or a replicated form
    if _level(n) == EXPR:
        return format_expr(n, EXPR)
    return format_expr(n, PREFIX)


def _format(n: Node) -> str:
    match n:
        case Num(value=v):
            return str(v)
        case BoolLit(value=v):
            return "true" if v else "false"
        case Name(id=ident):
            return ident
        case Lit(value=v):
            return _literal(v)
        case Call(name=name, args=args) | Ref(name=name, args=args) if args:
            return f"{name}({', '.join(format_expr(a) for a in args)})"
        case Call(name=name) | Ref(name=name):
            return name
        case Stop():
            return "STOP"
        case Skip():
            return "SKIP"
        case Dotted(head=head, fields=fields):
            return format_expr(head, PRIMARY) + "".join(_field(f) for f in fields)
        case BinOp(op=op, left=left, right=right):
            level = _LEVEL[op]
            rhs = level + 1 if level != CMP else SUM
            lhs = level if level != CMP else SUM
            return f"{format_expr(left, lhs)} {op.value} {format_expr(right, rhs)}"
        case UnOp(op=Op.NOT, operand=operand):
            return f"not {format_expr(operand, NOT)}"
        case UnOp(operand=operand):
            return f"-{format_expr(operand, UNARY)}"
        case SetRange(lo=lo, hi=hi):
            return f"{{{format_expr(lo)}..{format_expr(hi)}}}"
        case SetEnum(items=items):
            return "{" + ", ".join(format_expr(i) for i in items) + "}"
        case ChanSet(items=items):
            return "{| " + ", ".join(format_expr(i) for i in items) + " |}"
        case Prefix(pattern=pattern, body=body):
            return f"{format_expr(pattern, OR)} -> {_tail(body)}"
        case Guard(cond=cond, body=body):
            return f"{format_expr(cond, OR)} & {_tail(body)}"
        case IfThenElse(cond=cond, then=then, orelse=orelse):
            return f"if {format_expr(cond)} then {format_expr(then)} else {format_expr(orelse)}"
        case ExtChoice() | IntChoice() | Seq() | Interleave():
            op, level = _BINARY[type(n)]
            return f"{format_expr(n.left, level)} {op} {format_expr(n.right, level + 1)}"
        case Hide(body=body, events=events):
            return f"{format_expr(body, HIDING)} \\ {format_expr(events, PAR)}"
        case ParSync(left=left, sync=sync, right=right):
            return f"{format_expr(left, PAR)} [| {format_expr(sync)} |] {format_expr(right, ICHOICE)}"
        case Rename(body=body, pairs=pairs):
            inner = ", ".join(f"{format_expr(a, DOTTED)} <- {format_expr(b, DOTTED)}" for a, b in pairs)
            return f"{format_expr(body, POSTFIX)} [[{inner}]]"
        case ReplExtChoice() | ReplIntChoice() | ReplInterleave():
            op = _REPLICATED[type(n)]
            return f"{op} {n.var} : {format_expr(n.domain)} @ {format_expr(n.body)}"
        case ReplParSync(sync=sync, var=var, domain=domain, body=body):
            return f"[| {format_expr(sync)} |] {var} : {format_expr(domain)} @ {format_expr(body)}"
    raise TypeError(f"cannot print {type(n).__name__}")


def _field(f: Node) -> str:
    match f:
        case DotField(expr=expr):
            return "." + format_expr(expr, PRIMARY)
        case OutField(expr=expr):
            return "!" + format_expr(expr, PRIMARY)
        case InField(name=name, restrict=None):
            return "?" + name
        case InField(name=name, restrict=restrict):
            return f"?{name}:{format_expr(restrict, PRIMARY)}"
    raise TypeError(f"cannot print field {type(f).__name__}")


def _literal(v) -> str:
    if isinstance(v, Event):
        return str(v)
    if isinstance(v, frozenset):
        items = sorted(v, key=lambda e: e.rank if isinstance(e, Event) else 0)
        return "{" + ", ".join(_literal(i) for i in items) + "}"
    return format_value(v)


def format_assertion(a: Assertion) -> str:
    if a.kind in _ASSERT_OPS:
        text = f"assert {format_expr(a.operands[0])} {_ASSERT_OPS[a.kind]} {format_expr(a.operands[1])}"
    elif a.kind is AssertionKind.DECOUPLED:
        c, z = (format_expr(o) for o in a.operands[1:])
        text = f"assert {format_expr(a.operands[0])} :[decoupled {c}, {z}]"
    else:
        text = f"assert {format_expr(a.operands[0])} {_ASSERT_PROPERTIES[a.kind]}"
    if a.options:
        text += " with " + ", ".join(f"{k} = {format_expr(v)}" for k, v in a.options)
    return text


def format_declaration(d) -> str:
    match d:
        case TypeDecl(keyword=keyword, name=name, alternatives=alternatives):
            if keyword == "nametype":
                return f"nametype {name} = {format_expr(alternatives[0])}"
            alts = " | ".join(format_expr(a, DOTTED) for a in alternatives)
            return f"{keyword} {name} = {alts}"
        case ChannelsDecl(names=names, type_expr=None):
            return "channel " + ", ".join(names)
        case ChannelsDecl(names=names, type_expr=type_expr):
            return f"channel {', '.join(names)} : {format_expr(type_expr)}"
        case ProcessDef(name=name, params=params, body=body):
            head = f"{name}({', '.join(params)})" if params else name
            return f"{head} = {format_expr(body)}"
        case ContractDecl(name=name, composition=composition) if composition is not None:
            return f"contract {name} = {format_expr(composition)}"
        case ContractDecl(name=name, behaviour=behaviour, channels=channels):
            lines = [f"contract {name} {{", f"  behaviour {format_expr(behaviour, DOTTED)};"]
            lines.extend(f"  channel {c} : {format_expr(i, DOTTED)};" for c, i in channels)
            lines.append("}")
            return "\n".join(lines)
        case Assertion():
            return format_assertion(d)
    raise TypeError(f"cannot print declaration {type(d).__name__}")


def format_spec(spec: Spec) -> str:
    return "".join(format_declaration(d) + "\n" for d in spec.declarations)
