import numpy as np
import pytest

from ctgames.equilibrium import solve_equilibrium
from ctgames.models.entry import TRUTH as ENTRY_TRUTH, entry_build
from ctgames.models.renewal import TRUTH as RENEWAL_TRUTH, renewal_build

#: Lines collected by the acceptance module, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def renewal_game():
    return renewal_build(RENEWAL_TRUTH)


@pytest.fixture(scope="session")
def renewal_solution(renewal_game):
    return solve_equilibrium(renewal_game, method="policy")


@pytest.fixture(scope="session")
def entry_game():
    return entry_build(ENTRY_TRUTH)


@pytest.fixture(scope="session")
def entry_solution(entry_game):
    return solve_equilibrium(entry_game)


def random_intensity(rng, K, density=0.6, scale=1.0):
    """Dense random generator with roughly ``density`` nonzero off-diagonals."""
    A = rng.exponential(scale, (K, K)) * (rng.random((K, K)) < density)
    np.fill_diagonal(A, 0.0)
    return A
