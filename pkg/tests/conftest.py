import numpy as np
import pytest

from langevin_kernels import BrownianPath, PhasePoint


@pytest.fixture
def origin():
    return PhasePoint(0.0, 0.0)


@pytest.fixture
def path():
    return BrownianPath.sample(7, 1.0, 1e-3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# criterion lines collected by test_acceptance, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
