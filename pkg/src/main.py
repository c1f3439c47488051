import asyncio
import logging
import sys
from typing import Sequence

from src import config
from src.api import build_parser
from src.exc_registry import ExceptionRegistry, HandlerNotRegistered
from src.exceptions import registry as main_exc_registry
from src.infrastructure.repos.exceptions import registry as repos_exc_registry

logger = logging.getLogger(__name__)

exc_registry = ExceptionRegistry()
exc_registry.include_register(main_exc_registry)
exc_registry.include_register(repos_exc_registry)


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return asyncio.run(args.handler(args, sys.stdout))
    except Exception as exc:
        try:
            handler = exc_registry.resolve(exc)
        except HandlerNotRegistered:
            raise exc from None
        return handler(exc)


def main() -> None:
    logging.basicConfig(
        level=config.LOG_LEVEL.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    sys.exit(run())


if __name__ == "__main__":
    main()
