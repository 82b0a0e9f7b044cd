import pytest

from blowup_lab.fields import make_grid
from blowup_lab.groundstate import solve_ground_state
from blowup_lab.linops import solve_rho

_CRITERIA: list[str] = []


def record_criterion(line: str):
    """Collect a one-line PASS/FAIL verdict for the terminal summary."""
    _CRITERIA.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def bundle1():
    return solve_ground_state(1)


@pytest.fixture(scope="session")
def bundle2():
    return solve_ground_state(2)


@pytest.fixture(scope="session")
def grid1():
    return make_grid(1, 512, 16.0)


@pytest.fixture(scope="session")
def ref_grid1():
    return make_grid(1, 1024, 32.0)


@pytest.fixture(scope="session")
def rho_ref1(bundle1, ref_grid1):
    return solve_rho(bundle1, ref_grid1)
