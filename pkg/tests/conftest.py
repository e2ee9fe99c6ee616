import numpy as np
import pytest

from mslab import _accel
from mslab.density import DomainGrid, GaussianMixtureModel, gmm_rasterize

BACKENDS = ["numpy"] + (["numba"] if _accel.HAS_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    previous = _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(previous)


@pytest.fixture
def grid1d():
    return DomainGrid.uniform(-8.0, 8.0, 1024)


@pytest.fixture
def std_normal(grid1d):
    return gmm_rasterize(GaussianMixtureModel([1.0], [0.0], 1.0), grid1d)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d} {name}: {detail}")
