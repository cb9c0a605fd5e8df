import numpy as np
import pytest

from arrayimaging.geometry import ImagingConfig, sample_antennas
from arrayimaging.operator import ScatteringOperator

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(20130424)


@pytest.fixture(scope="session")
def reference_config():
    return ImagingConfig.default(6400)


@pytest.fixture
def small_config():
    return ImagingConfig.default(16)


@pytest.fixture
def small_op(small_config):
    arr = sample_antennas(small_config, 3, 7)
    return ScatteringOperator(small_config, arr, mode="dense")


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
