import numpy as np
import pytest

from seqestim.prior import Discrete, Gaussian, TwoPoint


@pytest.fixture
def gauss():
    return Gaussian(0.0, 1.0)


@pytest.fixture
def coin():
    return TwoPoint(0.5, 1.0)


@pytest.fixture
def five_atoms():
    return Discrete(np.array([-1.5, -0.5, 0.0, 0.7, 1.8]), np.array([0.1, 0.25, 0.3, 0.2, 0.15]))


_ACCEPTANCE = []


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
