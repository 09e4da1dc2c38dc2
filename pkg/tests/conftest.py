import numpy as np
import pytest

from shdpvar.inference import GibbsConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run tests marked slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="slow; pass --runslow to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def quick_gibbs():
    """Short chains for tests that only need a reasonable fit."""
    return GibbsConfig(truncation=6, max_iters=40, burn_in=20, point_estimate_window=15)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """``record(n, ok, detail)`` logs one acceptance line and asserts it."""

    def record(n, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        _CRITERIA[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in range(1, 11):
        terminalreporter.write_line(_CRITERIA.get(n, f"SKIP criterion {n}: not run in this session"))
