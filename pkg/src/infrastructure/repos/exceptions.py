from src.exc_registry import ExceptionRegistry
from src.exceptions import TOOL_ERROR, BriccError
from src.utils import create_handler

registry = ExceptionRegistry()


@registry.exception(create_handler(TOOL_ERROR))
class ObjectAlreadyExists(BriccError):
    """Raised when saving over a file the repository must not overwrite."""

    code = "E_IO"


@registry.exception(create_handler(TOOL_ERROR))
class ObjectDoesNotExists(BriccError):
    """Raised when a requested file does not exist or cannot be read."""

    code = "E_IO"


@registry.exception(create_handler(TOOL_ERROR))
class MalformedTable(BriccError):
    """Raised when a serialized process table has a row that does not parse."""

    code = "E_IO"
