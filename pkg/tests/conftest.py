import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mfstein.model import SisParams, build_sis

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SQRT2 = np.sqrt(2.0)
XSTAR = np.array([2 - SQRT2, SQRT2 - 1])


@pytest.fixture(scope="session")
def sis():
    return build_sis(SisParams(0.5, 0.5))


@pytest.fixture(scope="session")
def xstar():
    return XSTAR.copy()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
