import numpy as np
import pytest

from sysid.simulation import DistributionSpec, LinearSystem, NoiseModel, scaled_system

U = DistributionSpec.uniform


def random_system(rng, n, scale=0.5, offset=True):
    A = rng.normal(size=(n, n)) * scale / np.sqrt(n)
    a = rng.normal(size=n) if offset else None
    return LinearSystem(A, a)


def unit_noise(obs_lo=0.0, obs_hi=1.0):
    return NoiseModel(U(-1, 1), U(obs_lo, obs_hi), U(-1, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def stable4():
    return scaled_system(0.3)


@pytest.fixture
def noise():
    return unit_noise()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS, format_line
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        name, ok, detail = RESULTS[number]
        terminalreporter.write_line(format_line(number, name, ok, detail))
