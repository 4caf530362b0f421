import sys

import numpy as np
import pytest
from hypothesis import settings

from mprvlc.scenario import scenario_from_dict

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def make_scenario(devices=10, pds=2, seed=0, filter="mmse", **traffic):
    data = {
        "devices": {"count": devices, "seed": seed},
        "receiver": {"count": pds},
        "detector": {"filter": filter},
    }
    if traffic:
        data["traffic"] = traffic
    return scenario_from_dict(data)


def random_channel(rng, m, n, low=1e-7, high=2e-6):
    return rng.uniform(low, high, size=(m, n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_scenario():
    return make_scenario()


@pytest.fixture(scope="session")
def default_table(default_scenario):
    return default_scenario.rate_table()


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
