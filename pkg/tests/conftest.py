import numpy as np
import pytest

from reebsim import coeffs as C
from reebsim.morse import make_field
from reebsim.perturbations import LinearDrift
from reebsim.reeb import build_reeb


def pytest_addoption(parser):
    parser.addoption("--slow", action="store_true", default=False,
                     help="run the long SDE bridge checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running check, enabled with --slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--slow"):
        return
    skip = pytest.mark.skip(reason="needs --slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def h2():
    return make_field("h2")


@pytest.fixture(scope="session")
def h2_graph(h2):
    return build_reeb(h2)


@pytest.fixture(scope="session")
def harmonic():
    return make_field("harmonic")


@pytest.fixture(scope="session")
def harmonic_graph(harmonic):
    return build_reeb(harmonic)


@pytest.fixture(scope="session")
def sep4d():
    return make_field("sep4d", c=0.1)


@pytest.fixture(scope="session")
def sep4d_graph(sep4d):
    return build_reeb(sep4d)


@pytest.fixture(scope="session")
def sep4d_tables(sep4d, sep4d_graph):
    return C.tabulate_edges(sep4d_graph, sep4d, b_model=LinearDrift(0.5, 0.0, dp=2),
                            mc_samples=1_000_000, seed=0)


@pytest.fixture(scope="session")
def sep4d_cls(sep4d_graph, sep4d_tables):
    return C.classify_vertices(sep4d_graph, sep4d_tables)


@pytest.fixture(scope="session")
def h2_tables(h2, h2_graph):
    return C.tabulate_edges(h2_graph, h2, b_model=LinearDrift(0.5, 0.0, dp=1),
                            mc_samples=1_000_000, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
