import numpy as np
import pytest

from rdfem.assembly import TargetField, build_system
from rdfem.experiments import target_smooth
from rdfem.mesh import build_structured_cube

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cube():
    """Structured meshes cached per size."""
    cache = {}

    def get(n):
        if n not in cache:
            cache[n] = build_structured_cube(n)
        return cache[n]

    return get


@pytest.fixture(scope="session")
def smooth():
    return target_smooth()


@pytest.fixture(scope="session")
def smooth_system(cube, smooth):
    cache = {}

    def get(n, rho=1.0):
        if (n, rho) not in cache:
            cache[n, rho] = build_system(cube(n), rho, smooth)
        return cache[n, rho]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def constant_target(c=1.0):
    return TargetField(lambda x, y, z: np.full(np.broadcast(x, y, z).shape, float(c)))
