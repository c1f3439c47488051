import os

DEBUG = os.getenv("DEBUG", True)

if DEBUG:
    from dotenv import load_dotenv

    load_dotenv()


class MissingEnvVar(Exception):
    code = "E_MISSING_ENV"

    def __init__(self, var_name: str) -> None:
        self.var_name = var_name

    def __str__(self) -> str:
        return f"Missing environment variable '{self.var_name}'"


class InvalidEnvVar(Exception):
    code = "E_INVALID_ENV"

    def __init__(self, var_name: str, value: str, reason: str) -> None:
        self.var_name = var_name
        self.value = value
        self.reason = reason

    def __str__(self) -> str:
        return f"Invalid environment variable '{self.var_name}={self.value}': {self.reason}"


def get_env_var_or_exc(var_name: str, default_value: str = None) -> str:
    result = os.getenv(var_name, default_value)
    if not result:
        raise MissingEnvVar(var_name)

    return result


def get_int_env_var(var_name: str, default_value: int, minimum: int = 0) -> int:
    raw = get_env_var_or_exc(var_name, str(default_value))
    try:
        value = int(raw)
    except ValueError:
        raise InvalidEnvVar(var_name, raw, "not an integer") from None

    if value < minimum:
        raise InvalidEnvVar(var_name, raw, f"must be at least {minimum}")

    return value


def get_optional_int_env_var(var_name: str) -> int | None:
    if not os.getenv(var_name):
        return None

    return get_int_env_var(var_name, 0)


MAX_STATES = get_int_env_var("BRICC_MAX_STATES", 100_000, minimum=1)
GAP = get_optional_int_env_var("BRICC_GAP")
BUFFER_SIZE = get_int_env_var("BRICC_BUFFER_SIZE", 1, minimum=1)
REPORT = get_env_var_or_exc("BRICC_REPORT", "text")
ORACLE = bool(get_int_env_var("BRICC_ORACLE", 0))
SEED = get_int_env_var("BRICC_SEED", 0)
LOG_LEVEL = get_env_var_or_exc("BRICC_LOG_LEVEL", "WARNING")
WORKERS = get_int_env_var("BRICC_WORKERS", 4, minimum=1)

if REPORT not in ("text", "structured"):
    raise InvalidEnvVar("BRICC_REPORT", REPORT, "expected 'text' or 'structured'")
