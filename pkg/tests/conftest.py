import numpy as np
import pytest

from adiabatic_pes.grid import Grid1D
from adiabatic_pes.systems import HarmonicTrap, SoftCoulombLiH


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def lih():
    return SoftCoulombLiH()


@pytest.fixture(scope="session")
def trap():
    return HarmonicTrap()


@pytest.fixture(scope="session")
def lih_grid():
    return Grid1D(32, 0.6)


@pytest.fixture(scope="session")
def small_grid():
    return Grid1D(16, 0.8)


@pytest.fixture(scope="session")
def trap_grid():
    return Grid1D(12, 0.7)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
