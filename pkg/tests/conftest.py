import math

import numpy as np
import pytest

from twisted_psido.algebra import matrix_backend, nctorus_backend, scalar_backend
from twisted_psido.calculus import Sector

SECTOR = Sector(math.pi / 4, 3 * math.pi / 4, 1.0, 100.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sector():
    return SECTOR


@pytest.fixture
def scalar1():
    return scalar_backend(1)


@pytest.fixture
def scalar2():
    return scalar_backend(2)


@pytest.fixture
def mat1():
    return matrix_backend([[0.0, 0.0, 1.0]])


@pytest.fixture
def mat2():
    return matrix_backend([[0.0, 1.0, 2.0], [1.0, 0.0, -1.0]])


@pytest.fixture
def torus2():
    return nctorus_backend([[0.0, 0.7], [-0.7, 0.0]], 4)


def all_backends():
    return [scalar_backend(1), scalar_backend(2), matrix_backend([[0.0, 0.0, 1.0]]),
            matrix_backend([[0.0, 1.0, 2.0], [1.0, 0.0, -1.0]]),
            nctorus_backend([[0.0, 0.7], [-0.7, 0.0]], 8)]


# acceptance results: (criterion, passed, detail), printed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}  {detail}")
