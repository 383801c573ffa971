import numpy as np
import pytest

from mais.targets import bimodal_1d, five_mode_mixture, gaussian_1d


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def gauss():
    return gaussian_1d()


@pytest.fixture(scope="session")
def bimodal():
    return bimodal_1d()


@pytest.fixture(scope="session")
def mixture():
    return five_mode_mixture()


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
