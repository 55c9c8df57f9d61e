import numpy as np
import pytest

from stochmech import Grid, PhysicalParams, PotentialSpec

# lines emitted by test_acceptance, echoed at the end of the pytest run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def grid():
    return Grid(-20.0, 20.0, 256)


@pytest.fixture
def free():
    return PhysicalParams()


@pytest.fixture
def harmonic():
    return PhysicalParams(potential=PotentialSpec("harmonic", omega=1.0))


def uniform_amplitude(grid):
    return np.full(grid.n, grid.length**-0.5, dtype=complex)
