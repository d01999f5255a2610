import numpy as np
import pytest

from tetmotion import _backend
from tetmotion.geometry import box_mesh, icosphere


@pytest.fixture(scope="session")
def ico():
    return icosphere(0.5, 3)


@pytest.fixture(scope="session")
def cube():
    return box_mesh(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["numpy", "cython"])
def backend(request):
    """Run a test once per kernel backend, restoring the default afterwards."""
    if request.param == "cython" and _backend.compiled is None:
        pytest.skip("compiled extension not built")
    previous = _backend.kernels
    _backend.use(request.param)
    yield request.param
    _backend.kernels = previous


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one line per acceptance criterion for the terminal summary."""

    def record(number, title, passed, detail):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        _ACCEPTANCE.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
