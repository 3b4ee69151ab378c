import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nflab.grid import PeriodicGrid

settings.register_profile(
    "nflab", deadline=None, max_examples=15, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("nflab")


@pytest.fixture(scope="session")
def grid16():
    return PeriodicGrid(16)


@pytest.fixture(scope="session")
def grid32():
    return PeriodicGrid(32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; prints it and fails the test when ``ok`` is false."""

    def record(number, title, ok, detail):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        request.config.stash[_ACCEPTANCE][number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 12):
        terminalreporter.write_line(results.get(number, f"criterion {number:2d} FAIL  not evaluated"))
