import argparse
import logging
from typing import Awaitable, Callable, TextIO

from src.api.depends import get_check_service, get_serial_repo, get_spec_repo
from src.api.schemes import GetReport
from src.app.entities import CheckOptions, Report
from src.app.services.io_process_service import serialize
from src.app.services.lts_service import ModelCache, export_graph
from src.app.syntax import Spec
from src.exceptions import UnboundName

logger = logging.getLogger(__name__)

Command = Callable[[argparse.Namespace, TextIO], Awaitable[int]]


def options_from_args(args: argparse.Namespace) -> CheckOptions:
    return CheckOptions.from_config().with_overrides(
        gap=getattr(args, "gap", None),
        buffer_size=getattr(args, "buffer_size", None),
        max_states=getattr(args, "max_states", None),
        report=getattr(args, "report", None),
        oracle=True if getattr(args, "oracle", False) else None,
    )


def render_text(report: Report) -> str:
    lines = []
    for record in report.records:
        where = f"{record.source}:{record.line}" if record.source else f"line {record.line}"
        details = [f"{record.stats.states_explored} states", f"{record.stats.elapsed:.2f}s"]
        if record.method is not None:
            details.insert(0, record.method.value)
        lines.append(f"[{record.id}] {record.status.value:<5} {record.text}  ({', '.join(details)}; {where})")
        lines.extend(f"      {line}" for line in record.witness)
        lines.extend(f"      note: {note}" for note in record.notes)
        lines.extend(f"      {diagnostic}" for diagnostic in record.diagnostics)
    summary = report.summary
    lines.append(", ".join(f"{count} {status}" for status, count in summary.items()))
    return "\n".join(lines) + "\n"


def render_structured(report: Report) -> str:
    return GetReport.model_validate(report).model_dump_json(indent=2) + "\n"


def _process(spec: Spec, name: str):
    if name not in spec.processes:
        raise UnboundName(f"process {name} is not defined")
    return spec.process(name)


async def check(args: argparse.Namespace, out: TextIO) -> int:
    options = options_from_args(args)
    service = get_check_service(options)
    report = await service.run(args.files)
    out.write(render_structured(report) if options.report == "structured" else render_text(report))
    return report.exit_code


async def explain(args: argparse.Namespace, out: TextIO) -> int:
    service = get_check_service(options_from_args(args))
    lines = await service.explain(args.file, args.assertion)
    out.write("\n".join(lines) + "\n")
    return 0


async def serialize_command(args: argparse.Namespace, out: TextIO) -> int:
    spec = await get_spec_repo().get(args.file)
    options = options_from_args(args)
    models = ModelCache(spec, options.max_states)
    table = serialize(models.norm(_process(spec, args.process)))
    repo = get_serial_repo(spec.catalogue)
    if args.output:
        await repo.save(args.output, table)
        logger.info("wrote %d rows to %s", len(table.entries), args.output)
    else:
        out.write(repo.mapper.from_domain(table))
    return 0


async def lts_command(args: argparse.Namespace, out: TextIO) -> int:
    spec = await get_spec_repo().get(args.file)
    models = ModelCache(spec, options_from_args(args).max_states)
    expr = _process(spec, args.process)
    automaton = models.norm(expr, tolerate_divergence=True) if args.normal else models.lts(expr)
    out.write(export_graph(automaton))
    return 0


def _add_check_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--gap", type=int, help="depth gap of the GLB processes (default: automatic)")
    parser.add_argument("--buffer-size", type=int, help="capacity of composition buffers")
    parser.add_argument("--max-states", type=int, help="state budget of every exploration")
    parser.add_argument("--report", choices=("text", "structured"), help="report format")
    parser.add_argument("--oracle", action="store_true", help="decide convergence by brute force")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bricc", description="Checks I/O processes and BRIC contracts.")
    commands = parser.add_subparsers(dest="command", required=True)

    check_parser = commands.add_parser("check", help="run the assertions of scripts")
    check_parser.add_argument("files", nargs="*")
    _add_check_flags(check_parser)
    check_parser.set_defaults(handler=check)

    explain_parser = commands.add_parser("explain", help="render the witness of one assertion")
    explain_parser.add_argument("file")
    explain_parser.add_argument("assertion", type=int)
    _add_check_flags(explain_parser)
    explain_parser.set_defaults(handler=explain)

    serialize_parser = commands.add_parser("serialize", help="print the serialized table of a process")
    serialize_parser.add_argument("file")
    serialize_parser.add_argument("process")
    serialize_parser.add_argument("-o", "--output", help="write the table to a file instead")
    serialize_parser.add_argument("--max-states", type=int)
    serialize_parser.set_defaults(handler=serialize_command)

    lts_parser = commands.add_parser("lts", help="print the automaton of a process as DOT")
    lts_parser.add_argument("file")
    lts_parser.add_argument("process")
    lts_parser.add_argument("--normal", action="store_true", help="print the normal form instead")
    lts_parser.add_argument("--max-states", type=int)
    lts_parser.set_defaults(handler=lts_command)

    return parser
