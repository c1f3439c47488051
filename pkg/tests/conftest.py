import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from src.app.entities import CheckOptions
from src.app.services.lts_service import ModelCache
from src.app.services.parser_service import parse_spec
from src.infrastructure.repos import FileSpecRepository
from tests.strategies import process_trees, render_tree

CORPUS = Path(__file__).resolve().parent.parent / "corpus"
PROFILE = os.getenv("HYPOTHESIS_PROFILE", "fast")

settings.register_profile("fast", max_examples=25, deadline=None)
settings.register_profile(
    "ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(PROFILE)


def examples(count: int) -> settings:
    """Example budget of a property suite, capped outside the ci profile"""
    if PROFILE == "ci":
        return settings(max_examples=count)
    return settings(max_examples=min(count, settings.get_profile(PROFILE).max_examples))


@pytest.hookimpl(tryfirst=True)
def pytest_configure(config):
    # BRICC_SEED pins the generators unless --hypothesis-seed is given
    seed = CheckOptions.from_config().seed
    if seed and config.getoption("hypothesis_seed", None) is None:
        config.option.hypothesis_seed = str(seed)


# one channel carrying four values in both directions
IO_HEADER = """
datatype VAL = v.{1..4}
datatype IO = in.VAL | out.VAL
channel c : IO
"""


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    """Directory of the bundled assertion scripts"""
    return CORPUS


@pytest.fixture(scope="session")
def load_corpus():
    """Parse a corpus script together with its includes"""
    repo = FileSpecRepository()

    def load(name: str):
        text, source = repo.read_source(str(CORPUS / name))
        return parse_spec(text, source, loader=repo.read_source)

    return load


@pytest.fixture(scope="session")
def t_spec(load_corpus):
    """The T, T' and T'' family"""
    return load_corpus("t_family.iop")


@pytest.fixture
def t_models(t_spec):
    """Model cache over the T family"""
    return ModelCache(t_spec)


# finite processes over the one-channel header
_EVENTS = ["c.in.v.1", "c.in.v.2", "c.out.v.1", "c.out.v.2"]

process_texts = process_trees(_EVENTS).map(render_tree)
