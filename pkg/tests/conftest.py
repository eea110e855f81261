import copy
from functools import lru_cache

import pytest
from hypothesis import HealthCheck, settings

from sade.netmodel import build_scenario

settings.register_profile("sade", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("sade")

SCENARIOS = ("clos_bgp", "campus_ospf_service", "isp_static")
SIZES = ("small", "medium", "large")


@lru_cache(maxsize=None)
def _cached(scenario: str, size: str, seed: int):
    return build_scenario(scenario, size, seed)


def healthy(scenario: str, size: str = "small", seed: int = 0):
    """Shared read-only healthy topology; copy before mutating."""
    return _cached(scenario, size, seed)


def fresh(scenario: str, size: str = "small", seed: int = 0):
    return copy.deepcopy(_cached(scenario, size, seed))


@pytest.fixture
def clos_small():
    return healthy("clos_bgp", "small")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
