import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from irmap import factor_paths, synthesize_panel

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("irmap", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("irmap")


@pytest.fixture(scope="session")
def small_panel():
    """40 days x 13 tenors, mildly moving factors, light noise."""
    factors = factor_paths(40, level_sd=0.02, slope_sd=0.01, curv_sd=0.01, seed=1)
    return synthesize_panel(factors, noise_sd=0.01, seed=2)


@pytest.fixture(scope="session")
def clean_panel():
    """Noise-free panel with constant factors."""
    return synthesize_panel(factor_paths(35), noise_sd=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)``."""
    log = request.config.stash[ACCEPTANCE_KEY]

    def record(n, ok, detail=""):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        log[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(ACCEPTANCE_KEY, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(log):
        terminalreporter.write_line(log[n])
