import asyncio
import logging
import time
from dataclasses import asdict, dataclass, field

from src.app.entities import (
    TICK,
    CheckOptions,
    CheckRecord,
    ConvergenceVerdict,
    Direction,
    FailuresModel,
    GlbConfig,
    NormLts,
    Relation,
    Report,
    Stats,
    Status,
    Verdict,
    format_trace,
)
from src.app.services.bric_service import ContractService
from src.app.services.convergence_service import (
    check_cvg,
    check_ecvg,
    classify_witness,
    glb_cvg_process,
    glb_spec,
    glb_ecvg_process,
)
from src.app.services.expr_service import Evaluator
from src.app.services.failures_service import (
    check_deadlock_free,
    check_failures_equivalence,
    check_failures_refinement,
)
from src.app.services.io_process_service import check_io_process, depth, serialize
from src.app.services.lts_service import LazyNormalForm, ModelCache, TermSemantics, check_divergence_free
from src.app.services.parser_service import COMPOSITIONS, GENERATORS
from src.app.syntax import Assertion, AssertionKind, Call, Name, Node, ProcessDef, Spec
from src.exceptions import BriccError, Divergent, NoWitness, SerialShape
from src.infrastructure.repos.base import BaseSpecRepository

logger = logging.getLogger(__name__)


@dataclass
class _Context:
    spec: Spec
    options: CheckOptions
    models: ModelCache
    contracts: ContractService
    notes: list[str] = field(default_factory=list)


class CheckService:
    """Runs the assertions of assertion scripts and assembles the report."""

    def __init__(self, spec_repo: BaseSpecRepository, options: CheckOptions | None = None):
        self._spec_repo = spec_repo
        self._options = options or CheckOptions.from_config()

    @property
    def options(self) -> CheckOptions:
        return self._options

    async def run(self, paths: list[str]) -> Report:
        records: list[CheckRecord] = []
        async for spec in self._spec_repo.get_all(paths):
            records.extend(await self.check_spec(spec))
        return Report(tuple(records), asdict(self._options))

    async def check_spec(self, spec: Spec) -> list[CheckRecord]:
        context = self._context(spec, self._options)
        semaphore = asyncio.Semaphore(self._options.workers)

        async def bounded(assertion: Assertion) -> CheckRecord:
            async with semaphore:
                return await asyncio.to_thread(self.evaluate, context, assertion)

        # gather keeps script order whatever order the workers finish in
        return list(await asyncio.gather(*(bounded(a) for a in spec.assertions)))

    async def explain(self, path: str, assertion_id: int) -> list[str]:
        """Re-runs one assertion and renders its witness event by event."""
        spec = await self._spec_repo.get(path)
        assertion = next((a for a in spec.assertions if a.id == assertion_id), None)
        if assertion is None:
            raise NoWitness(f"{path} has no assertion {assertion_id}")

        context = self._context(spec, self._options)
        record = await asyncio.to_thread(self.evaluate, context, assertion)
        if record.counterexample is None:
            raise NoWitness(f"assertion {assertion_id} ({record.status.value}) has no counterexample")
        return await asyncio.to_thread(self._render_witness, context, assertion, record)

    # ---------- evaluation ----------

    @staticmethod
    def _context(spec: Spec, options: CheckOptions) -> _Context:
        models = ModelCache(spec, options.max_states)
        return _Context(spec, options, models, ContractService(spec, options, models))

    def _local_context(self, context: _Context, assertion: Assertion) -> _Context:
        if not assertion.options:
            return _Context(context.spec, context.options, context.models, context.contracts)
        evaluator = Evaluator(context.spec)
        overrides = {key: evaluator.integer(value) for key, value in assertion.options}
        options = context.options.with_overrides(**overrides)
        if options.max_states != context.options.max_states:
            return self._context(context.spec, options)
        return _Context(context.spec, options, context.models, ContractService(context.spec, options, context.models))

    def evaluate(self, context: _Context, assertion: Assertion) -> CheckRecord:
        started = time.perf_counter()
        logger.info("assertion %d: %s", assertion.id, assertion.text)
        try:
            local = self._local_context(context, assertion)
            verdict = self._dispatch(local, assertion)
        except BriccError as e:
            logger.info("assertion %d: ERROR %s", assertion.id, e)
            diagnostics = tuple(str(d) for d in e.diagnostics) or (str(e),)
            return CheckRecord(
                assertion.id,
                assertion.kind.value,
                assertion.text,
                Status.ERROR,
                stats=Stats(0, time.perf_counter() - started),
                diagnostics=diagnostics,
                source=context.spec.source,
                line=assertion.line,
            )

        elapsed = time.perf_counter() - started
        logger.info("assertion %d: %s in %.3fs", assertion.id, verdict.status.value, elapsed)
        method = verdict.method if isinstance(verdict, ConvergenceVerdict) else None
        return CheckRecord(
            assertion.id,
            assertion.kind.value,
            assertion.text,
            verdict.status,
            method,
            verdict.counterexample,
            Stats(verdict.stats.states_explored, elapsed),
            verdict.notes + tuple(local.notes),
            source=context.spec.source,
            line=assertion.line,
            universe=context.spec.catalogue.universe,
        )

    def _dispatch(self, context: _Context, a: Assertion) -> Verdict | ConvergenceVerdict:
        kind = a.kind
        if kind is AssertionKind.FAILURES_REFINE:
            spec_p, impl_q = self._operands(context, a.operands)
            return check_failures_refinement(spec_p, impl_q)
        if kind is AssertionKind.EQUIVALENT:
            left, right = self._operands(context, a.operands)
            return check_failures_equivalence(left, right)
        if kind is AssertionKind.DEADLOCK_FREE:
            return check_deadlock_free(self._model(context, a.operands[0]))
        if kind is AssertionKind.DIVERGENCE_FREE:
            expr, definitions = self._behaviour(context, a.operands[0])
            return check_divergence_free(context.models.lts(expr, definitions))
        if kind is AssertionKind.IO_PROCESS:
            expr, definitions = self._behaviour(context, a.operands[0])
            report = check_io_process(context.models.lts(expr, definitions), context.spec.channels)
            failure = report.first_failure()
            if failure is None:
                return Verdict.ok(sum(v.stats.states_explored for v in report.conditions))
            number, verdict = failure
            return Verdict.fail(verdict.counterexample, verdict.stats.states_explored, (f"condition {number}",))
        if kind in (AssertionKind.CVG, AssertionKind.ECVG):
            t_prime, t = (self._norm(context, o) for o in a.operands)
            check = check_cvg if kind is AssertionKind.CVG else check_ecvg
            return check(t, t_prime, options=context.options)
        if kind is AssertionKind.BRIC_REFINE:
            t, t_prime = (context.contracts.evaluate(o) for o in a.operands)
            return context.contracts.check_bric_refinement(t, t_prime)
        if kind in (AssertionKind.INHERIT_CVG, AssertionKind.INHERIT_ECVG):
            t, t_prime = (context.contracts.evaluate(o) for o in a.operands)
            mode = Relation.CVG if kind is AssertionKind.INHERIT_CVG else Relation.ECVG
            return context.contracts.check_inheritance(t, t_prime, mode, context.options)
        if kind is AssertionKind.DECOUPLED:
            operand, c, z = a.operands
            expr, definitions = self._behaviour(context, operand)
            return context.contracts.check_decoupled(expr, c.id, z.id, definitions)
        raise BriccError(f"unsupported assertion kind {kind}")

    # ---------- operands ----------

    def _is_contract(self, context: _Context, n: Node) -> bool:
        match n:
            case Name(id=ident):
                return ident in context.spec.contracts
            case Call(name=name):
                return name in COMPOSITIONS
        return False

    def _behaviour(self, context: _Context, n: Node) -> tuple[Node, tuple[ProcessDef, ...]]:
        if self._is_contract(context, n):
            contract = context.contracts.evaluate(n)
            return contract.behaviour, contract.definitions
        return n, ()

    def _norm(self, context: _Context, n: Node) -> NormLts:
        expr, definitions = self._behaviour(context, n)
        try:
            return context.models.norm(expr, False, definitions)
        except Divergent:
            logger.warning("%s diverges; comparing its stable failures", expr)
            return context.models.norm(expr, True, definitions)

    def _model(self, context: _Context, n: Node, other: NormLts | None = None) -> FailuresModel:
        if isinstance(n, Call) and n.name in GENERATORS:
            return self._glb(context, n, other)
        return self._norm(context, n)

    def _operands(self, context: _Context, operands: tuple[Node, ...]) -> tuple[FailuresModel, FailuresModel]:
        left, right = operands
        left_is_glb = isinstance(left, Call) and left.name in GENERATORS
        if left_is_glb:
            impl = self._model(context, right)
            return self._model(context, left, impl if isinstance(impl, NormLts) else None), impl
        spec_p = self._model(context, left)
        return spec_p, self._model(context, right, spec_p if isinstance(spec_p, NormLts) else None)

    def _glb(self, context: _Context, n: Call, other: NormLts | None) -> LazyNormalForm:
        t = self._norm(context, n.args[0])
        sp = serialize(t)
        gap = context.options.gap
        if gap is None:
            gap = 0
            reason = "the refining operand is not a normal form"
            if other is not None:
                try:
                    gap = max(0, depth(other) - sp.source_depth)
                    reason = None
                except SerialShape as e:
                    reason = e.message
            if reason is not None:
                logger.warning("no depth for the refining operand (%s); using gap 0", reason)
                context.notes.append(f"gap defaulted to 0: {reason}")
        cfg = GlbConfig(gap, sp.inputs, sp.inputs | sp.outputs)
        build = glb_cvg_process if n.name == "GLB_CVG" else glb_ecvg_process
        definitions, root = build(sp, cfg)
        semantics = TermSemantics(glb_spec(definitions, t.universe), context.options.max_states)
        return LazyNormalForm(semantics, root, tolerate_divergence=True)

    # ---------- rendering ----------

    def _convergence_pair(self, context: _Context, assertion: Assertion) -> tuple[NormLts, NormLts] | None:
        """Original and extension behind a witness, when the assertion compares the two."""
        left, *rest = assertion.operands
        if assertion.kind in (AssertionKind.CVG, AssertionKind.ECVG):
            return self._norm(context, rest[0]), self._norm(context, left)
        if assertion.kind in (AssertionKind.INHERIT_CVG, AssertionKind.INHERIT_ECVG):
            semantics = [context.contracts.contract_semantics(context.contracts.evaluate(o)) for o in assertion.operands]
            return semantics[0].overall, semantics[1].overall
        if assertion.kind is AssertionKind.FAILURES_REFINE and isinstance(left, Call) and left.name in GENERATORS:
            return self._norm(context, left.args[0]), self._norm(context, rest[0])
        return None

    def _render_witness(self, context: _Context, assertion: Assertion, record: CheckRecord) -> list[str]:
        witness = record.counterexample
        events = witness.trace + ((witness.event,) if witness.event is not None else ())

        marks: dict[int, bool] = {}
        pair = self._convergence_pair(context, assertion)
        if pair is not None:
            t, t_prime = pair
            marked = classify_witness(t, t_prime, [e for e in events if e != TICK])
            marks = {i: new for i, (_, new) in enumerate(marked)}

        lines = [f"assertion {record.id}: {record.text}", f"status {record.status.value}"]
        for index, event in enumerate(events):
            tag = event.direction.value if event.direction is not Direction.PLAIN else "event"
            line = f"  {index + 1:>3}. {event} [{tag}]"
            if marks.get(index):
                kind = "input" if event.direction is Direction.IN else "output"
                line += f"  <- new-in-context {kind}"
            lines.append(line)
        lines.append(f"trace {format_trace(witness.trace)}")
        lines.extend(witness.render(context.spec.catalogue.universe)[1:])
        return lines
