import numpy as np
import pytest

from blockcg.linalg import SpdOperator

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_spd(n, rng, cond=100.0):
    """Dense SPD matrix with log-spaced eigenvalues in [1, cond] and a random basis."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.logspace(0, np.log10(cond), n)
    return (Q * w) @ Q.T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def spd12(rng):
    return SpdOperator(random_spd(12, rng))
