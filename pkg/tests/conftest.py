import numpy as np
import pytest
from hypothesis import settings

from qndsim.probe import ProbeSchedule, PumpingModel

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

# lines collected by the acceptance module, echoed once at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def schedule():
    return ProbeSchedule()


@pytest.fixture
def pumping():
    return PumpingModel()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
