import numpy as np
import pytest
from hypothesis import settings

from torusflow.grid import TorusGrid

settings.register_profile("repo", max_examples=25, deadline=None)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def g2():
    return TorusGrid(2, 32)


@pytest.fixture(scope="session")
def g4():
    return TorusGrid(4, 8)


@pytest.fixture(scope="session")
def acceptance_lines(pytestconfig):
    """Outcome lines collected for the terminal summary."""
    if not hasattr(pytestconfig, "_acceptance_lines"):
        pytestconfig._acceptance_lines = []
    return pytestconfig._acceptance_lines


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
