import numpy as np
import pytest

from inertia_lab.field import TorusGrid


@pytest.fixture
def grid2():
    return TorusGrid(2, 32)


@pytest.fixture
def grid16():
    return TorusGrid(2, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record one ``PASS``/``FAIL`` line for the end-of-session acceptance table."""
    def record(criterion: str, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'}  criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
