import sys

import numpy as np
import pytest

from reflidar import synth


@pytest.fixture(scope="session")
def rosette():
    return synth.RosetteConfig()


@pytest.fixture(scope="session")
def room_scans(rosette):
    """500 stationary rosette scans of the default room (shared; about 10 s)."""
    return synth.simulate_sequence(synth.default_scene(), rosette, 500)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
