import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from prft.jaynescummings import figure_presets
from prft.model import GaussianPhotonState

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def preset(name):
    return figure_presets(name)


@pytest.fixture(scope="session")
def fig2():
    return preset("fig2")


@pytest.fixture(scope="session")
def fig3():
    return preset("fig3")


@pytest.fixture(scope="session")
def fig4():
    return preset("fig4")


def diagonal_state(variance, n_modes=2, phases=(0.0, np.pi / 2)):
    return GaussianPhotonState.diagonal([variance] * n_modes, mean_phases=phases)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
