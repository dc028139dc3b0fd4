import pytest

from thickpoints.continuum import UNIT_DISC
from thickpoints.lattice import discretize

ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def disc16():
    return discretize(UNIT_DISC, 16, 0j)


@pytest.fixture(scope="session")
def disc32():
    return discretize(UNIT_DISC, 32, 0j)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
