import numpy as np
import pytest

from tpsdet import _accel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["numba", "numpy"])
def kernel_backend(request):
    """Run a test once per kernel backend."""
    if request.param == "numba" and not _accel.HAVE_NUMBA:
        pytest.skip("numba not installed")
    prev = _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(prev)


_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.fixture
def criterion(request):
    """``record(n, passed, detail)``: one summary line per acceptance criterion."""

    def record(n: int, passed: bool, detail: str) -> bool:
        line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.stash[_CRITERIA][n] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
