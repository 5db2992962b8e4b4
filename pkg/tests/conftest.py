import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hedsense.cost import CostModel
from hedsense.distributions import HyperExp

settings.register_profile(
    "default", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=1000, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def heavy():
    """Balanced two-phase mix with a 100x rate spread."""
    return HyperExp((0.5, 0.5), (0.1, 10.0))


@pytest.fixture
def skewed():
    return HyperExp((0.9, 0.1), (10.0, 0.1))


@pytest.fixture
def unit_costs():
    return CostModel(1.0, 1.0, 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
