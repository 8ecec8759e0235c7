import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance

ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Lines collected by the acceptance tests; printed in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def reach_discrete():
    from quantdiff.experiments import REACH, run_recipe
    return run_recipe(REACH, "discrete")


@pytest.fixture(scope="session")
def reach_baseline():
    from quantdiff.experiments import REACH, run_recipe
    return run_recipe(REACH, "mse_baseline")


@pytest.fixture(scope="session")
def precision_fine():
    from quantdiff.experiments import PRECISION, run_recipe
    return run_recipe(PRECISION, "discrete")


@pytest.fixture(scope="session")
def precision_coarse():
    from quantdiff.experiments import PRECISION, run_recipe
    return run_recipe(PRECISION.with_bins(8), "discrete")
