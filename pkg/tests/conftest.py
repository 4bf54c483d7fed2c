import time

import numpy as np
import pytest

from nonovershoot import benchmark as bm
from nonovershoot.acceptance import Runs
from nonovershoot.cone import ConeSpec
from nonovershoot.synthesis import LinearPlant

# The acceptance file runs last so that its suite-runtime check sees every test.
_LAST = "test_acceptance.py"


def pytest_configure(config):
    config.suite_start = time.perf_counter()


def pytest_collection_modifyitems(session, config, items):
    items.sort(key=lambda it: (it.fspath.basename == _LAST,
                               it.name == "test_full_suite_runtime"))


@pytest.fixture(scope="session")
def runs():
    """Benchmark data with the simulations cached across the session."""
    return Runs()


@pytest.fixture(scope="session")
def plant():
    return LinearPlant(bm.A, bm.B)


@pytest.fixture(scope="session")
def cone():
    return ConeSpec(bm.H)


@pytest.fixture(scope="session")
def controller(runs):
    return runs.controller


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
