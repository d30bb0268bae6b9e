import numpy as np
import pytest
from hypothesis import settings

from hct.dataio import normalize_walk
from hct.model import default_config, init_params
from hct.synthetic import synthetic_corpus, write_corpus

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def two_class_params():
    return init_params(default_config("detection"), 0)


@pytest.fixture(scope="session")
def multi_class_params():
    return init_params(default_config("staging"), 0)


@pytest.fixture(scope="session")
def corpus_walks():
    """Raw synthetic walks: 10 controls, 12 PD subjects (4 per stage), 2 walks each."""
    return synthetic_corpus(n_control=10, n_per_stage=4, walks_per_subject=2, length=400, seed=7)


@pytest.fixture(scope="session")
def normalized_walks(corpus_walks):
    return [normalize_walk(w) for w in corpus_walks]


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, corpus_walks):
    path = tmp_path_factory.mktemp("corpus")
    write_corpus(path, corpus_walks)
    return path


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion; returns ``ok``."""

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
