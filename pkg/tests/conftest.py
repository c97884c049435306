import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from mldual.models import ModelSpec  # noqa: E402
from mldual.monodromy import populate  # noqa: E402


@pytest.fixture(scope="session")
def rect332():
    return populate(ModelSpec("rect", 3, 3, 2), seed=0)


@pytest.fixture(scope="session")
def sym42():
    return populate(ModelSpec("sym", 4, 4, 2), seed=0)


@pytest.fixture(scope="session")
def skew42():
    return populate(ModelSpec("skew", 4, 4, 2), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
