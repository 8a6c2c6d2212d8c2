import numpy as np
import pytest

from glmdesk import _backend

AVAILABLE = [b for b in _backend.BACKENDS if b != "numba" or _backend.HAS_NUMBA]


@pytest.fixture(params=AVAILABLE)
def backend(request):
    """Run the test once per kernel backend."""
    with _backend.use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda l: int(l.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
