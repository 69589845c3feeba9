import pytest

from core.model import ClusterModel, MeanValueFunction, Scenario
from core.quadrature import QuadratureConfig
from core.table_cache import clear_cache


@pytest.fixture(autouse=True)
def _fresh_tables():
    clear_cache()
    yield
    clear_cache()


@pytest.fixture
def quad():
    return QuadratureConfig()


@pytest.fixture
def study_scenario():
    """Lambda = 30x, mu = 5x, Poisson clusters, t = s = 1."""
    return Scenario(
        center=MeanValueFunction.linear(30.0),
        cluster=ClusterModel.poisson(MeanValueFunction.linear(5.0)),
    )


@pytest.fixture
def small_scenario():
    """Lambda = 10x, mu = 2x: E[M(1)] = 10, fast to simulate."""
    return Scenario(
        center=MeanValueFunction.linear(10.0),
        cluster=ClusterModel.poisson(MeanValueFunction.linear(2.0)),
    )


@pytest.fixture
def nb_scenario():
    return Scenario(
        center=MeanValueFunction.linear(30.0),
        cluster=ClusterModel.negbinomial(MeanValueFunction.linear(5.0), 0.5),
    )


@pytest.fixture
def small_nb_scenario():
    return Scenario(
        center=MeanValueFunction.linear(10.0),
        cluster=ClusterModel.negbinomial(MeanValueFunction.linear(2.0), 0.5),
    )
