import os

import pytest
from hypothesis import HealthCheck, settings

from hypwalk.groups import GroupModel
from hypwalk.measures import MeasureCurve, StepMeasure

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def F2():
    return GroupModel.free(2)


@pytest.fixture
def Z3Z3():
    return GroupModel.free_product(3, 3)


@pytest.fixture
def uniform(F2):
    return StepMeasure.uniform(F2)


@pytest.fixture
def curve_b(F2):
    base = StepMeasure.from_mapping(F2, {"a": 0.3, "b": 0.2})
    return MeasureCurve.from_mapping(base, {"a": 1.0, "b": -1.0})


@pytest.fixture
def curve_c(F2, uniform):
    return MeasureCurve.from_mapping(uniform, {"a": 1.0, "b": -1.0})


# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
