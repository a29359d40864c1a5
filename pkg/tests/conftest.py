import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from infosamp.synthpop import PopulationConfig, generate_population

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def nested_pop():
    """200 PSUs x 10 households x 3 persons."""
    return generate_population(PopulationConfig(200, 10, 3), seed=11)


@pytest.fixture(scope="session")
def small_nested_pop():
    return generate_population(PopulationConfig(4, 3, 2), seed=5)


@pytest.fixture
def flat_pop():
    def make(N, seed=0):
        return generate_population(PopulationConfig(N=N), seed=seed)
    return make


def pairs_dense(tab):
    """Full symmetric pi_ij matrix from a table, pi on the diagonal."""
    J = np.outer(tab.pi, tab.pi) if tab.unstored == "factoring" else np.full((tab.N, tab.N), np.nan)
    J[tab.rows, tab.cols] = tab.values
    J[tab.cols, tab.rows] = tab.values
    J[np.diag_indices(tab.N)] = tab.pi
    return J
