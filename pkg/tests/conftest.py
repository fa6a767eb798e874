import numpy as np
import pytest

from cemgms.femops import build_partition_of_unity
from cemgms.grid import build_hierarchy
from cemgms.medium import Medium, generate_default_medium
from cemgms.offline import build_auxiliary_space


@pytest.fixture
def rng():
    return np.random.default_rng(20171011)


@pytest.fixture(scope="session")
def small_grid():
    return build_hierarchy(4, 4, 4)


@pytest.fixture(scope="session")
def small_medium(small_grid):
    """Piecewise-constant random field with a high-contrast channel, on a 16x16 fine grid."""
    g = small_grid
    rng = np.random.default_rng(7)
    kappa = rng.uniform(1.0, 3.0, g.num_fine_cells).reshape(g.fine_ny, g.fine_nx)
    kappa[5, :] = 1e3
    kappa[9:11, 9:11] = 5e2
    return Medium(g, kappa.ravel())


@pytest.fixture(scope="session")
def small_setup(small_grid, small_medium):
    pou = build_partition_of_unity(small_grid)
    aux = build_auxiliary_space(small_grid, small_medium, pou, 3)
    return small_grid, small_medium, pou, aux


@pytest.fixture(scope="session")
def default_10x10():
    g = build_hierarchy(10, 10, 10)
    return g, generate_default_medium(g, 1e4)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
