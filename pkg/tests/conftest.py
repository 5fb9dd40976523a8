import numpy as np
import pytest

from kickedhj.potential import Potential
from kickedhj.torus import GridSpec
from kickedhj.twist import hyperbolic_linearization
from kickedhj.variational import action_matrix, solve_weak_kam

_CRITERIA = []


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    _CRITERIA.append(line)
    print(line)
    return passed


@pytest.fixture(scope="session")
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def F1():
    return Potential.cosine(1.0)


@pytest.fixture(scope="session")
def spec256():
    return GridSpec(1, 256)


@pytest.fixture(scope="session")
def sol256(F1, spec256):
    return solve_weak_kam(F1, spec256, tol=1e-11)


@pytest.fixture(scope="session")
def A256(F1, spec256):
    return action_matrix(spec256, F1)


@pytest.fixture(scope="session")
def spec1024():
    return GridSpec(1, 1024)


@pytest.fixture(scope="session")
def sol1024(F1, spec1024):
    return solve_weak_kam(F1, spec1024, tol=1e-10)


@pytest.fixture(scope="session")
def hyp1(F1):
    return hyperbolic_linearization(F1)


@pytest.fixture(scope="session")
def F2():
    return Potential.cosine([1.0, 0.7], d=2, cross=0.1)


@pytest.fixture(scope="session")
def sol2d(F2):
    return solve_weak_kam(F2, GridSpec(2, 32), tol=1e-11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
