import json
import logging
import sys
from typing import Callable, TextIO

logger = logging.getLogger(__name__)


def create_handler(code: int) -> Callable[[Exception], int]:
    """Собирает обработчик, печатающий диагностику и возвращающий код выхода"""

    def diagnostic_handler(exc: Exception, stream: TextIO | None = None) -> int:
        stream = stream or sys.stderr
        details = []
        for diag in getattr(exc, "diagnostics", None) or []:
            details.append(
                {
                    "loc": [diag.source or "<input>", diag.line, diag.column],
                    "msg": diag.message,
                    "type": exc.__class__.__name__,
                    "code": diag.code,
                }
            )

        if not details:
            details.append(
                {
                    "loc": ["<input>"],
                    "msg": str(exc),
                    "type": exc.__class__.__name__,
                    "code": getattr(exc, "code", "E_TOOL"),
                }
            )

        logger.debug("rendering %s as exit code %d", exc.__class__.__name__, code)
        stream.write(json.dumps({"detail": details}, ensure_ascii=False) + "\n")
        return code

    return diagnostic_handler
