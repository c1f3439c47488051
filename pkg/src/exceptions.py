from dataclasses import dataclass, field

from src.config import InvalidEnvVar, MissingEnvVar
from src.exc_registry import ExceptionRegistry
from src.utils import create_handler

TOOL_ERROR = 2

registry = ExceptionRegistry()


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    source: str | None = None
    line: int | None = None
    column: int | None = None

    def __str__(self) -> str:
        where = self.source or "<input>"
        if self.line is not None:
            where += f":{self.line}:{self.column or 0}"
        return f"{where}: {self.code}: {self.message}"


@dataclass(eq=False)
class BriccError(Exception):
    """Base class of every error the checker reports with a code."""

    message: str
    diagnostics: list[Diagnostic] = field(default_factory=list)

    code = "E_TOOL"

    def __post_init__(self) -> None:
        super().__init__(self.message)

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


# ---------- Specification errors ----------


@registry.exception(create_handler(TOOL_ERROR))
class SyntaxErrorInSpec(BriccError):
    """Raised when the specification text does not parse."""

    code = "E_SYNTAX"


@registry.exception(create_handler(TOOL_ERROR))
class UnboundName(BriccError):
    """Raised when a name resolves to no declaration or binder."""

    code = "E_UNBOUND"


@registry.exception(create_handler(TOOL_ERROR))
class TypeMismatch(BriccError):
    """Raised when a value is outside the type it is used with."""

    code = "E_TYPE"


@registry.exception(create_handler(TOOL_ERROR))
class EmptyReplication(BriccError):
    """Raised when a replicated choice ranges over an empty set."""

    code = "E_EMPTY_REPL"


@registry.exception(create_handler(TOOL_ERROR))
class ArityMismatch(BriccError):
    code = "E_ARITY"


# ---------- Engine errors ----------


@registry.exception(create_handler(TOOL_ERROR))
class StateBudgetExceeded(BriccError):
    """Raised when exploration reaches more states than the budget allows."""

    code = "E_STATE_BUDGET"


@registry.exception(create_handler(TOOL_ERROR))
class Divergent(BriccError):
    code = "E_DIVERGENT"


@registry.exception(create_handler(TOOL_ERROR))
class AlphabetMismatch(BriccError):
    code = "E_ALPHABET_MISMATCH"


@registry.exception(create_handler(TOOL_ERROR))
class NoSuchTrace(BriccError):
    code = "E_NO_SUCH_TRACE"


@registry.exception(create_handler(TOOL_ERROR))
class SerialShape(BriccError):
    """Raised when a process has a cycle that avoids its initial state."""

    code = "E_SERIAL_SHAPE"


@registry.exception(create_handler(TOOL_ERROR))
class NotSubset(BriccError):
    code = "E_NOT_SUBSET"


@registry.exception(create_handler(TOOL_ERROR))
class BoundTooSmall(BriccError):
    code = "E_BOUND_TOO_SMALL"


# ---------- Composition errors ----------


@registry.exception(create_handler(TOOL_ERROR))
class ChannelClash(BriccError):
    """Raised when composed contracts share a channel."""

    code = "E_CHANNEL_CLASH"


@registry.exception(create_handler(TOOL_ERROR))
class SideConditionFailed(BriccError):
    code = "E_SIDE_CONDITION"


@registry.exception(create_handler(TOOL_ERROR))
class NotDecoupled(BriccError):
    code = "E_NOT_DECOUPLED"


@registry.exception(create_handler(TOOL_ERROR))
class DeadlockIntroduced(BriccError):
    code = "E_DEADLOCK"


@registry.exception(create_handler(TOOL_ERROR))
class InvalidContract(BriccError):
    code = "E_INVALID_CONTRACT"


# ---------- Reporting errors ----------


@registry.exception(create_handler(TOOL_ERROR))
class NoWitness(BriccError):
    """Raised when explaining an assertion that has no counterexample."""

    code = "E_NO_WITNESS"


registry.register(MissingEnvVar, create_handler(TOOL_ERROR))
registry.register(InvalidEnvVar, create_handler(TOOL_ERROR))
