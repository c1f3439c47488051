from typing import Callable, Type

ExitHandler = Callable[[Exception], int]


class RegistryException(Exception):
    def __init__(self, exc_type: Type[Exception]) -> None:
        self.exc_type = exc_type


class HandlerNotRegistered(RegistryException):
    def __str__(self) -> str:
        return f"No exit handler for '{self.exc_type.__name__}' or its bases."


class HandlerAlreadyRegistered(RegistryException):
    def __str__(self) -> str:
        return f"Exit handler for '{self.exc_type.__name__}' is already registered."


class ExceptionRegistry:
    """Maps exception classes to handlers that report them and return an exit code."""

    def __init__(self):
        self._handlers: dict[Type[Exception], ExitHandler] = {}

    def exception(self, handler: ExitHandler):
        def decorator(exception: Type[Exception]):
            self.register(exception, handler)
            return exception

        return decorator

    @property
    def handlers(self) -> dict[Type[Exception], ExitHandler]:
        return dict(self._handlers)

    def register(self, exc_type: Type[Exception], handler: ExitHandler) -> None:
        if exc_type in self._handlers:
            raise HandlerAlreadyRegistered(exc_type)

        self._handlers[exc_type] = handler

    def resolve(self, exc: Exception) -> ExitHandler:
        """The handler of the closest registered class in the MRO of ``exc``."""
        for cls in type(exc).__mro__:
            if cls in self._handlers:
                return self._handlers[cls]

        raise HandlerNotRegistered(type(exc))

    def include_register(self, register: "ExceptionRegistry") -> None:
        for exc_type, handler in register.handlers.items():
            self.register(exc_type, handler)
