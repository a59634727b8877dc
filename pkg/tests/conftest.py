from pathlib import Path

import numpy as np
import pytest

from contrakt.repro import FIXTURES

_ACCEPTANCE_LINES = []


def record(line: str) -> None:
    """Register a one-line acceptance verdict for the terminal summary."""
    _ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
