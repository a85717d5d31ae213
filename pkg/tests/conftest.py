import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=30, deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# small transformer widths keep model-level tests quick; shapes and wiring are unchanged
DESK = dict(reduction_channels=32, token_dim=64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines collected by test_acceptance.py, echoed after the run
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
