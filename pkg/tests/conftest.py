import numpy as np
import pytest

_ACCEPTANCE_LINES = []


def random_spd(rng, m, ridge=None):
    a = rng.standard_normal((m, m))
    return a.T @ a + (m if ridge is None else ridge) * np.eye(m)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
