import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from klbias.kernels import Domain, FreeEnergyModel
from klbias.rng import ParticleStreams
from klbias.smc import Population, initialize_population
from klbias.systems import ToySystem
from klbias.targets import MalaSettings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TOY_BETA = 10.0


def gaussian(scale=1.0):
    """``q -> (log density, gradient)`` of an unnormalized centered Gaussian."""

    def f(q):
        return -0.5 * np.sum(q * q, axis=1) / scale**2, -q / scale**2

    return f


def gaussian_population(n, seed, scale=1.0, dim=1):
    streams = ParticleStreams.from_seed(seed, n)
    q = scale * streams.normal(dim)
    return Population(q, np.zeros((n, 0)), np.zeros(n), streams, seed)


@pytest.fixture(scope="session")
def toy():
    return ToySystem(2.0, 30.0)


@pytest.fixture(scope="session")
def toy_domain():
    return Domain([-0.5], [0.5])


@pytest.fixture(scope="session")
def oracle_model():
    """Three kernels used by the frozen quadrature values."""
    return FreeEnergyModel([[0.0], [0.25], [-0.3]], [[10.0], [40.0], [25.0]], [0.0, 0.0, 0.0], [-0.5],
                           TOY_BETA)


def toy_population(system, domain, model, n, seed, n_equil=200):
    return initialize_population(system, domain, model, TOY_BETA, n, seed, MalaSettings(), n_equil)


# -- acceptance report ---------------------------------------------------------

ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """``verdict(label, passed, detail)`` records and prints one PASS/FAIL line."""

    def record(label, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'} {label}" + (f": {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
