import itertools
import logging
from dataclasses import dataclass, fields, replace
from typing import Callable

from lark import Lark, Token, Transformer, v_args
from lark.exceptions import UnexpectedCharacters, UnexpectedEOF, UnexpectedInput, VisitError

from src.app.entities import (
    ChannelDecl,
    Event,
    EventCatalogue,
    TypeKind,
    ValueType,
    build_channel,
    flatten,
    value_key,
)
from src.app.services.expr_service import BUILTINS, Evaluator
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
    children,
    free_vars,
    pattern_binders,
)
from src.exceptions import (
    ArityMismatch,
    BriccError,
    Diagnostic,
    EmptyReplication,
    SyntaxErrorInSpec,
    TypeMismatch,
    UnboundName,
)

logger = logging.getLogger(__name__)

# names generated by the GLB builders and assertion operators
GENERATORS = frozenset({"GLB_CVG", "GLB_ECVG"})
COMPOSITIONS = frozenset({"interleave", "comm", "feedback", "reflexive"})

parser = Lark(
    r"""
    start:          _decl*
    _decl:          datatype | subtype | nametype | channel | procdef
                  | contract | contract_comp | include | assertion

    datatype:       "datatype" NAME "=" dotted ("|" dotted)*
    subtype:        "subtype" NAME "=" dotted ("|" dotted)*
    nametype:       "nametype" NAME "=" expr
    channel:        "channel" NAME ("," NAME)* [":" expr]
    procdef:        NAME ("(" _names? ")")? "=" expr
    _names:         NAME ("," NAME)*
    contract:       "contract" NAME "{" (_contract_item ";"?)* "}"
    _contract_item: behaviour | channel_item
    behaviour:      "behaviour" dotted
    channel_item:   "channel" NAME ":" dotted
    contract_comp:  "contract" NAME "=" expr
    include:        "include" ESCAPED_STRING

    assertion:      ASSERT expr "[F=" expr [options]                        -> assert_refine
                  | ASSERT expr "==F" expr [options]                        -> assert_equiv
                  | ASSERT expr ":[" "deadlock" "free" _FMODEL? "]" [options] -> assert_deadlock
                  | ASSERT expr ":[" "divergence" "free" "]" [options]      -> assert_divergence
                  | ASSERT expr ":[" "io" "process" "]" [options]           -> assert_io
                  | ASSERT expr ":[" "decoupled" NAME "," NAME "]" [options] -> assert_decoupled
                  | ASSERT expr "cvg" expr [options]                        -> assert_cvg
                  | ASSERT expr "ecvg" expr [options]                       -> assert_ecvg
                  | ASSERT expr "[B=" expr [options]                        -> assert_bric
                  | ASSERT expr "<-cvg" expr [options]                      -> assert_inherit_cvg
                  | ASSERT expr "<-ecvg" expr [options]                     -> assert_inherit_ecvg
    options:        "with" option ("," option)*
    option:         NAME "=" expr

    ?expr:          ite | repl | hiding
    ite:            "if" expr "then" expr "else" expr
    repl:           "[]" NAME ":" expr "@" expr                              -> repl_ext
                  | "|~|" NAME ":" expr "@" expr                             -> repl_int
                  | "|||" NAME ":" expr "@" expr                             -> repl_inter
                  | "[|" expr "|]" NAME ":" expr "@" expr                    -> repl_par
    ?hiding:        par | hiding "\\" par                                    -> hide
    ?par:           ichoice
                  | par "[|" expr "|]" ichoice                               -> par_sync
                  | par "|||" ichoice                                        -> interleave
    ?ichoice:       echoice | ichoice "|~|" echoice                          -> int_choice
    ?echoice:       seq | echoice "[]" seq                                   -> ext_choice
    ?seq:           prefix | seq ";" prefix                                  -> sequence
    ?prefix:        orx
                  | orx "->" _tail                                           -> prefix
                  | orx "&" _tail                                            -> guard
    _tail:          prefix | ite | repl
    ?orx:           andx | orx "or" andx                                     -> or_op
    ?andx:          notx | andx "and" notx                                   -> and_op
    ?notx:          compare | "not" notx                                     -> not_op
    ?compare:       sum
                  | sum "==" sum -> eq | sum "!=" sum -> ne
                  | sum "<" sum -> lt | sum "<=" sum -> le
                  | sum ">" sum -> gt | sum ">=" sum -> ge
    ?sum:           term | sum "+" term -> add | sum "-" term -> sub
    ?term:          unary | term "*" unary -> mul | term "/" unary -> div | term "%" unary -> mod
    ?unary:         postfix | "-" unary                                      -> neg
    ?postfix:       dotted | postfix "[[" renaming ("," renaming)* "]]"      -> rename
    renaming:       dotted "<-" dotted
    ?dotted:        primary | primary field+                                 -> dotted
    field:          "." primary                                              -> dot_field
                  | "?" NAME [":" primary]                                   -> in_field
                  | "!" primary                                              -> out_field
    _args:          expr ("," expr)*
    ?primary:       INT                                                      -> num
                  | "true"                                                   -> true
                  | "false"                                                  -> false
                  | "STOP"                                                   -> stop
                  | "SKIP"                                                   -> skip
                  | NAME                                                     -> name
                  | NAME "(" _args? ")"                                    -> call
                  | "(" expr ")"
                  | "{" "}"                                                  -> empty_set
                  | "{" expr ".." expr "}"                                   -> set_range
                  | "{" expr ("," expr)* "}"                                 -> set_enum
                  | "{|" expr ("," expr)* "|}"                               -> chan_set

    NAME:           /[A-Za-z_][A-Za-z0-9_]*'*/
    ASSERT:         "assert"
    _FMODEL:        "[F]"
    LINE_COMMENT:   /--[^\n]*/
    BLOCK_COMMENT:  /\{-(.|\n)*?-\}/

    %import common (INT, ESCAPED_STRING, WS)
    %ignore WS
    %ignore LINE_COMMENT
    %ignore BLOCK_COMMENT
    """,
    parser="lalr",
    lexer="contextual",
    propagate_positions=True,
    maybe_placeholders=True,
)


@dataclass(frozen=True)
class Include:
    path: str
    line: int


@v_args(inline=True)
class SpecTransformer(Transformer):
    """Turns the parse tree into syntax nodes and declaration records."""

    def __init__(self, text: str):
        super().__init__()
        self._lines = text.splitlines()
        self._assertions = itertools.count(1)

    # rule: start
    def start(self, *declarations):
        return list(declarations)

    # rule: datatype / subtype / nametype
    def datatype(self, name: Token, *alternatives):
        return TypeDecl("datatype", str(name), alternatives, name.line)

    def subtype(self, name: Token, *alternatives):
        return TypeDecl("subtype", str(name), alternatives, name.line)

    def nametype(self, name: Token, expr):
        return TypeDecl("nametype", str(name), (expr,), name.line)

    # rule: channel
    def channel(self, *items):
        *names, type_expr = items
        return ChannelsDecl(tuple(str(n) for n in names), type_expr, names[0].line)

    # rule: procdef
    def procdef(self, name: Token, *rest):
        *params, body = rest
        return ProcessDef(str(name), tuple(str(p) for p in params if p is not None), body, name.line)

    # rule: contract
    def contract(self, name: Token, *items):
        behaviour = None
        channels = []
        for kind, payload in items:
            if kind == "behaviour":
                behaviour = payload
            else:
                channels.append(payload)
        return ContractDecl(str(name), behaviour, tuple(channels), None, name.line)

    def behaviour(self, expr):
        return ("behaviour", expr)

    def channel_item(self, name: Token, iface):
        return ("channel", (str(name), iface))

    def contract_comp(self, name: Token, expr):
        return ContractDecl(str(name), None, (), expr, name.line)

    def include(self, path: Token):
        return Include(path[1:-1], path.line)

    # rule: assertion
    def _assertion(self, keyword: Token, kind: AssertionKind, operands, options):
        line = keyword.line
        text = self._lines[line - 1].strip() if 0 < line <= len(self._lines) else ""
        return Assertion(next(self._assertions), kind, tuple(operands), options or (), text, line)

    def assert_refine(self, keyword, left, right, options):
        return self._assertion(keyword, AssertionKind.FAILURES_REFINE, (left, right), options)

    def assert_equiv(self, keyword, left, right, options):
        return self._assertion(keyword, AssertionKind.EQUIVALENT, (left, right), options)

    def assert_cvg(self, keyword, left, right, options):
        return self._assertion(keyword, AssertionKind.CVG, (left, right), options)

    def assert_ecvg(self, keyword, left, right, options):
        return self._assertion(keyword, AssertionKind.ECVG, (left, right), options)

    def assert_bric(self, keyword, left, right, options):
        return self._assertion(keyword, AssertionKind.BRIC_REFINE, (left, right), options)

    def assert_inherit_cvg(self, keyword, left, right, options):
        return self._assertion(keyword, AssertionKind.INHERIT_CVG, (left, right), options)

    def assert_inherit_ecvg(self, keyword, left, right, options):
        return self._assertion(keyword, AssertionKind.INHERIT_ECVG, (left, right), options)

    def assert_deadlock(self, keyword, operand, options):
        return self._assertion(keyword, AssertionKind.DEADLOCK_FREE, (operand,), options)

    def assert_divergence(self, keyword, operand, options):
        return self._assertion(keyword, AssertionKind.DIVERGENCE_FREE, (operand,), options)

    def assert_io(self, keyword, operand, options):
        return self._assertion(keyword, AssertionKind.IO_PROCESS, (operand,), options)

    def assert_decoupled(self, keyword, operand, c: Token, z: Token, options):
        operands = (operand, Name(str(c), c.line, c.column), Name(str(z), z.line, z.column))
        return self._assertion(keyword, AssertionKind.DECOUPLED, operands, options)

    def options(self, *items):
        return tuple(items)

    def option(self, key: Token, value):
        return (str(key), value)

    # rule: ite / repl
    def ite(self, cond, then, orelse):
        return IfThenElse(cond, then, orelse)

    def repl_ext(self, var, domain, body):
        return ReplExtChoice(str(var), domain, body)

    def repl_int(self, var, domain, body):
        return ReplIntChoice(str(var), domain, body)

    def repl_inter(self, var, domain, body):
        return ReplInterleave(str(var), domain, body)

    def repl_par(self, sync, var, domain, body):
        return ReplParSync(sync, str(var), domain, body)

    # rule: hiding / par / choice / seq
    def hide(self, body, events):
        return Hide(body, events)

    def par_sync(self, left, sync, right):
        return ParSync(left, sync, right)

    def interleave(self, left, right):
        return Interleave(left, right)

    def int_choice(self, left, right):
        return IntChoice(left, right)

    def ext_choice(self, left, right):
        return ExtChoice(left, right)

    def sequence(self, left, right):
        return Seq(left, right)

    # rule: prefix
    def prefix(self, pattern, body):
        return Prefix(pattern, body)

    def guard(self, cond, body):
        return Guard(cond, body)

    # rule: boolean and arithmetic operators
    def or_op(self, left, right):
        return BinOp(Op.OR, left, right)

    def and_op(self, left, right):
        return BinOp(Op.AND, left, right)

    def not_op(self, operand):
        return UnOp(Op.NOT, operand)

    def eq(self, left, right):
        return BinOp(Op.EQ, left, right)

    def ne(self, left, right):
        return BinOp(Op.NE, left, right)

    def lt(self, left, right):
        return BinOp(Op.LT, left, right)

    def le(self, left, right):
        return BinOp(Op.LE, left, right)

    def gt(self, left, right):
        return BinOp(Op.GT, left, right)

    def ge(self, left, right):
        return BinOp(Op.GE, left, right)

    def add(self, left, right):
        return BinOp(Op.ADD, left, right)

    def sub(self, left, right):
        return BinOp(Op.SUB, left, right)

    def mul(self, left, right):
        return BinOp(Op.MUL, left, right)

    def div(self, left, right):
        return BinOp(Op.DIV, left, right)

    def mod(self, left, right):
        return BinOp(Op.MOD, left, right)

    def neg(self, operand):
        if isinstance(operand, Num):
            return Num(-operand.value)
        return UnOp(Op.NEG, operand)

    # rule: postfix
    def rename(self, body, *pairs):
        return Rename(body, tuple(pairs))

    def renaming(self, source, target):
        return (source, target)

    # rule: dotted
    def dotted(self, head, *fields):
        return Dotted(head, tuple(fields))

    def dot_field(self, expr):
        return DotField(expr)

    def in_field(self, name: Token, restrict):
        return InField(str(name), restrict)

    def out_field(self, expr):
        return OutField(expr)

    # rule: primary
    def num(self, token: Token):
        return Num(int(token))

    def true(self):
        return BoolLit(True)

    def false(self):
        return BoolLit(False)

    def stop(self):
        return Stop()

    def skip(self):
        return Skip()

    def name(self, token: Token):
        return Name(str(token), token.line, token.column)

    def call(self, token: Token, *args):
        return Call(str(token), tuple(a for a in args if a is not None), token.line, token.column)

    def empty_set(self):
        return SetEnum(())

    def set_range(self, lo, hi):
        return SetRange(lo, hi)

    def set_enum(self, *items):
        return SetEnum(tuple(items))

    def chan_set(self, *items):
        return ChanSet(tuple(items))


def _syntax_diagnostic(e: UnexpectedInput, source: str | None) -> Diagnostic:
    if isinstance(e, UnexpectedCharacters):
        message = f"unexpected character {e.char!r}"
    elif isinstance(e, UnexpectedEOF):
        message = "unexpected end of input"
    else:
        token = getattr(e, "token", None)
        message = f"unexpected {token!r}" if token is not None else "unexpected input"
    expected = sorted(getattr(e, "expected", None) or getattr(e, "allowed", None) or [])
    if expected:
        message += f"; expected one of {', '.join(expected[:8])}"
    return Diagnostic("E_SYNTAX", message, source, getattr(e, "line", None), getattr(e, "column", None))


def parse_declarations(
    text: str,
    source: str | None = None,
    loader: Callable[[str, str | None], tuple[str, str]] | None = None,
    _seen: frozenset[str] = frozenset(),
) -> list:
    """Parse one text into declaration records, splicing included files."""
    try:
        tree = parser.parse(text)
    except UnexpectedInput as e:
        diag = _syntax_diagnostic(e, source)
        raise SyntaxErrorInSpec(diag.message, [diag]) from e

    try:
        declarations = SpecTransformer(text).transform(tree)
    except VisitError as e:
        raise SyntaxErrorInSpec(str(e.orig_exc), [Diagnostic("E_SYNTAX", str(e.orig_exc), source)]) from e

    result = []
    for d in declarations:
        if not isinstance(d, Include):
            result.append(d)
            continue
        if loader is None:
            diag = Diagnostic("E_SYNTAX", f"include {d.path!r} needs a file loader", source, d.line)
            raise SyntaxErrorInSpec(diag.message, [diag])
        included_text, included_source = loader(d.path, source)
        if included_source in _seen:
            logger.debug("skipping repeated include of %s", included_source)
            continue
        result.extend(
            parse_declarations(included_text, included_source, loader, _seen | {included_source})
        )
    return result


def parse_spec(
    text: str,
    source: str | None = None,
    loader: Callable[[str, str | None], tuple[str, str]] | None = None,
) -> Spec:
    """Parse, enumerate types and channels, and resolve every name."""
    declarations = parse_declarations(text, source, loader, frozenset({source}) if source else frozenset())
    spec = SpecBuilder(source).build(declarations)
    logger.info(
        "parsed %s: %d channels, %d processes, %d assertions",
        source or "<input>",
        len(spec.channels),
        len(spec.processes),
        len(spec.assertions),
    )
    return spec


class SpecBuilder:
    """Enumerates declared types, builds the event catalogue and resolves names."""

    def __init__(self, source: str | None = None):
        self._source = source
        self._types: dict[str, ValueType] = {}
        self._labels: dict[str, str] = {}
        self._channels: dict[str, ChannelDecl] = {}
        self._processes: dict[str, ProcessDef] = {}
        self._contracts: dict[str, ContractDecl] = {}
        self._assertions: list[Assertion] = []
        self._diagnostics: list[tuple[type[BriccError], Diagnostic]] = []
        self._next_rank = 0

    def _report(self, exc: type[BriccError], message: str, line: int | None = None, column=None):
        self._diagnostics.append((exc, Diagnostic(exc.code, message, self._source, line, column)))

    def build(self, declarations: list) -> Spec:
        numbered = []
        for d in declarations:
            match d:
                case TypeDecl():
                    self._declare_type(d)
                case ChannelsDecl():
                    self._declare_channels(d)
                case ProcessDef():
                    self._declare_unique(self._processes, d.name, d, d.line)
                case ContractDecl():
                    self._declare_unique(self._contracts, d.name, d, d.line)
                case Assertion():
                    d = replace(d, id=len(self._assertions) + 1)
                    self._assertions.append(d)
            numbered.append(d)

        spec = Spec(
            declarations=(),
            types=dict(self._types),
            labels=dict(self._labels),
            channels=dict(self._channels),
            catalogue=EventCatalogue(self._channels.values()),
            source=self._source,
        )
        resolver = Resolver(spec, self._processes, self._contracts, self._report)
        processes = {name: resolver.process(d) for name, d in self._processes.items()}
        contracts = {name: resolver.contract(d) for name, d in self._contracts.items()}
        assertions = tuple(resolver.assertion(a) for a in self._assertions)

        if self._diagnostics:
            exc, first = self._diagnostics[0]
            raise exc(first.message, [diag for _, diag in self._diagnostics])

        lookup = {
            id(old): new
            for old, new in itertools.chain(
                zip(self._processes.values(), processes.values()),
                zip(self._contracts.values(), contracts.values()),
                zip(self._assertions, assertions),
            )
        }
        final = tuple(lookup.get(id(d), d) for d in numbered)
        return replace(
            spec,
            declarations=final,
            processes=processes,
            contracts=contracts,
            assertions=assertions,
        )

    def _declare_unique(self, table: dict, name: str, decl, line: int) -> None:
        if name in table or name in self._channels or name in self._types:
            self._report(SyntaxErrorInSpec, f"{name} is declared twice", line)
            return
        table[name] = decl

    # ---------- types ----------

    def _declare_type(self, d: TypeDecl) -> None:
        if d.name in self._types:
            self._report(SyntaxErrorInSpec, f"type {d.name} is declared twice", d.line)
            return
        try:
            values: list[tuple] = []
            has_product = False
            for alternative in d.alternatives:
                declare = d.keyword != "nametype" or isinstance(alternative, Dotted)
                for v in self._type_values(alternative, declare_head=declare):
                    if v not in values:
                        values.append(v)
                has_product |= isinstance(alternative, Dotted)
        except BriccError as e:
            self._report(type(e), f"in type {d.name}: {e.message}", d.line)
            return

        if not values:
            self._report(TypeMismatch, f"type {d.name} denotes an empty value set", d.line)
            return

        if all(len(v) == 1 and isinstance(v[0], int) and not isinstance(v[0], bool) for v in values):
            kind = TypeKind.INT_RANGE
        elif all(len(v) == 1 for v in values):
            kind = TypeKind.ENUM
        elif len(d.alternatives) == 1 and has_product:
            kind = TypeKind.PRODUCT
        else:
            kind = TypeKind.UNION
        self._types[d.name] = ValueType(d.name, kind, tuple(values))

    def _type_values(self, n: Node, declare_head: bool = False) -> list[tuple]:
        match n:
            case Name(id="Bool"):
                return [(False,), (True,)]
            case Name(id=ident) if ident in self._types:
                return list(self._types[ident].values)
            case Name(id=ident) if ident in self._labels or declare_head:
                self._labels.setdefault(ident, ident)
                return [(ident,)]
            case Name(id=ident):
                raise UnboundName(f"name {ident} is not bound")
            case Dotted(head=head, fields=fields):
                parts = [self._type_values(head, declare_head=declare_head)]
                for f in fields:
                    if not isinstance(f, DotField):
                        raise TypeMismatch("type expressions only use '.' fields")
                    parts.append(self._type_values(f.expr))
                return [sum(combo, ()) for combo in itertools.product(*parts)]
            case Num(value=v) | BoolLit(value=v):
                return [(v,)]
        closed = Spec(types=dict(self._types), labels=dict(self._labels))
        values = Evaluator(closed).set_value(n)
        return [flatten(v) for v in sorted(values, key=value_key)]

    # ---------- channels ----------

    def _declare_channels(self, d: ChannelsDecl) -> None:
        payload = None
        if d.type_expr is not None:
            try:
                if isinstance(d.type_expr, Name) and d.type_expr.id in self._types:
                    payload = self._types[d.type_expr.id]
                else:
                    values = self._type_values(d.type_expr)
                    payload = ValueType(f"<{d.names[0]}>", TypeKind.UNION, tuple(values))
            except (BriccError, ValueError) as e:
                self._report(TypeMismatch, f"channel payload: {e}", d.line)
                return

        for name in d.names:
            if name in self._channels:
                self._report(SyntaxErrorInSpec, f"channel {name} is declared twice", d.line)
                continue
            channel = build_channel(name, payload, self._next_rank)
            self._next_rank += len(channel.events)
            self._channels[name] = channel


class Resolver:
    """Turns process names into references and checks the static rules."""

    def __init__(self, spec: Spec, processes: dict, contracts: dict, report):
        self._spec = spec
        self._processes = processes
        self._contracts = contracts
        self._report = report
        self._evaluator = Evaluator(spec)
        self._globals = (
            set(spec.types) | set(spec.labels) | set(spec.channels) | set(contracts) | {"Bool", "Events"}
        )

    def process(self, d: ProcessDef) -> ProcessDef:
        return replace(d, body=self.resolve(d.body, frozenset(d.params), d.line))

    def contract(self, d: ContractDecl) -> ContractDecl:
        behaviour = self.resolve(d.behaviour, frozenset(), d.line) if d.behaviour is not None else None
        channels = []
        for channel, iface in d.channels:
            if channel not in self._spec.channels:
                self._report(UnboundName, f"contract {d.name} uses undeclared channel {channel}", d.line)
            channels.append((channel, self.resolve(iface, frozenset(), d.line)))
        composition = None
        if d.composition is not None:
            composition = self.resolve(d.composition, frozenset(), d.line, compositions=True)
        return replace(d, behaviour=behaviour, channels=tuple(channels), composition=composition)

    def assertion(self, a: Assertion) -> Assertion:
        operands = tuple(self.resolve(o, frozenset(), a.line, compositions=True) for o in a.operands)
        options = tuple((k, self.resolve(v, frozenset(), a.line)) for k, v in a.options)
        return replace(a, operands=operands, options=options)

    def resolve(self, n: Node, scope: frozenset[str], line: int, compositions: bool = False) -> Node:
        match n:
            case Name(id=ident) if ident in scope or ident in self._globals:
                return n
            case Name(id=ident) if ident in self._processes:
                arity = len(self._processes[ident].params)
                if arity:
                    self._report(ArityMismatch, f"{ident} takes {arity} arguments, got 0", n.line, n.column)
                return Ref(ident)
            case Name(id=ident):
                self._report(UnboundName, f"name {ident} is not bound", n.line or line, n.column)
                return n
            case Call(name=name, args=args):
                resolved = tuple(self.resolve(a, scope, line, compositions) for a in args)
                if name in self._processes:
                    arity = len(self._processes[name].params)
                    if arity != len(args):
                        self._report(
                            ArityMismatch, f"{name} takes {arity} arguments, got {len(args)}", n.line, n.column
                        )
                    return Ref(name, resolved)
                if name in BUILTINS or name in GENERATORS or (compositions and name in COMPOSITIONS):
                    return replace(n, args=resolved)
                self._report(UnboundName, f"function {name} is not bound", n.line or line, n.column)
                return n
            case Prefix(pattern=pattern, body=body):
                pattern = self._pattern(pattern, scope, line)
                result = Prefix(pattern, self.resolve(body, scope | pattern_binders(pattern), line))
                self._check_literal(pattern, scope, line)
                return result
            case ReplExtChoice() | ReplIntChoice() | ReplInterleave() | ReplParSync():
                domain = self.resolve(n.domain, scope, line)
                body = self.resolve(n.body, scope | {n.var}, line)
                if isinstance(n, ReplParSync):
                    result = replace(n, sync=self.resolve(n.sync, scope, line), domain=domain, body=body)
                else:
                    result = replace(n, domain=domain, body=body)
                if isinstance(n, (ReplExtChoice, ReplIntChoice)):
                    self._check_domain(n, domain, scope, line)
                return result
            case Rename(body=body, pairs=pairs):
                return Rename(
                    self.resolve(body, scope, line),
                    tuple((self.resolve(a, scope, line), self.resolve(b, scope, line)) for a, b in pairs),
                )
            case Dotted(head=head, fields=fields):
                return Dotted(self.resolve(head, scope, line), tuple(self._field(f, scope, line) for f in fields))

        if not children(n):
            return n
        return _rebuild(n, lambda c: self.resolve(c, scope, line, compositions))

    def _field(self, f: Node, scope, line):
        match f:
            case InField(restrict=None):
                return f
            case InField(restrict=restrict):
                return replace(f, restrict=self.resolve(restrict, scope, line))
            case DotField(expr=expr) | OutField(expr=expr):
                return type(f)(self.resolve(expr, scope, line))
        return f

    def _pattern(self, pattern: Node, scope, line) -> Node:
        if isinstance(pattern, Dotted):
            # fields may refer to variables bound by earlier input fields
            fields = []
            local = set(scope)
            for f in pattern.fields:
                fields.append(self._field(f, frozenset(local), line))
                if isinstance(f, InField):
                    local.add(f.name)
            return Dotted(self.resolve(pattern.head, scope, line), tuple(fields))
        return self.resolve(pattern, scope, line)

    def _check_literal(self, pattern: Node, scope, line) -> None:
        if (free_vars(pattern) & scope) or (isinstance(pattern, Dotted) and pattern.is_pattern):
            return
        try:
            self._evaluator.offers(pattern)
        except (TypeMismatch, UnboundName) as e:
            self._report(type(e), e.message, line)

    def _check_domain(self, n: Node, domain: Node, scope, line) -> None:
        if free_vars(domain) & scope:
            return
        try:
            values = self._evaluator.set_value(domain)
        except (TypeMismatch, UnboundName) as e:
            self._report(type(e), e.message, line)
            return
        if not values and isinstance(n, ReplIntChoice):
            self._report(EmptyReplication, f"internal choice over {n.var} ranges over an empty set", line)


def _rebuild(n: Node, f: Callable[[Node], Node]) -> Node:
    changes = {}
    for fld in fields(n):
        if not fld.compare:
            continue
        value = getattr(n, fld.name)
        if isinstance(value, Node):
            changes[fld.name] = f(value)
        elif isinstance(value, tuple) and any(isinstance(v, Node) for v in value):
            changes[fld.name] = tuple(f(v) if isinstance(v, Node) else v for v in value)
    return replace(n, **changes)


def alphabet(spec: Spec, expr: Node) -> frozenset[Event]:
    """Events on every channel a process can syntactically mention."""
    evaluator = Evaluator(spec)
    channels: set[str] = set()
    events: set[Event] = set()
    seen: set[str] = set()
    everything = False

    def visit(n: Node) -> None:
        nonlocal everything
        match n:
            case Ref(name=name, args=args):
                for a in args:
                    visit(a)
                if name not in seen and name in spec.processes:
                    seen.add(name)
                    visit(spec.processes[name].body)
                return
            case Prefix(pattern=Dotted(head=Name(id=ident)), body=body) if ident in spec.channels:
                channels.add(ident)
                visit(body)
                return
            case Prefix(pattern=pattern, body=body):
                try:
                    events.update(evaluator.events(pattern))
                except BriccError:
                    everything = True
                visit(body)
                return
            case Rename(body=body, pairs=pairs):
                visit(body)
                for _, target in pairs:
                    try:
                        events.update(evaluator.events(target))
                    except BriccError:
                        if isinstance(target, Name) and target.id in spec.channels:
                            channels.add(target.id)
                return
        for c in children(n):
            visit(c)

    visit(expr)
    if everything:
        return spec.catalogue.universe
    for name in channels:
        events.update(spec.catalogue.channel_events(name))
    return frozenset(events)
