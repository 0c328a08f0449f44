import numpy as np
import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one human-readable acceptance line; printed in the terminal summary."""
    return ACCEPTANCE_LINES.append


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
