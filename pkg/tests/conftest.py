import numpy as np
import pytest

from cfsf.pipeline import EstimatorConfig
from cfsf.simulate import TriangularDesign, generate


@pytest.fixture(scope="session")
def design():
    return TriangularDesign()


@pytest.fixture(scope="session")
def small_table(design):
    return generate(design, 400, 11)


@pytest.fixture(scope="session")
def fast_config():
    return EstimatorConfig(M=59, S=199)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    from _support import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
