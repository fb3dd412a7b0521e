import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gmnse import spectral as sp

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid8():
    return sp.make_grid(8)


@pytest.fixture(scope="session")
def grid16():
    return sp.make_grid(16)


@pytest.fixture(scope="session")
def grid24():
    return sp.make_grid(24)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
