import pytest

from chemodp.model import CostParams, DoseSet, ModelParams
from chemodp.uncertainty import UncertaintyModel, build_clusters


@pytest.fixture(scope="session")
def nominal():
    return ModelParams.nominal()


@pytest.fixture(scope="session")
def cost():
    return CostParams()


@pytest.fixture(scope="session")
def doses():
    return DoseSet()


@pytest.fixture(scope="session")
def dirac_clusters():
    return build_clusters(UncertaintyModel(dirac=True, sample_count=100, cluster_count=1))


@pytest.fixture(scope="session")
def small_clusters():
    """Five clusters from a modest dispersed sample; deterministic."""
    return build_clusters(UncertaintyModel(sample_count=1500, cluster_count=5, seed=11))
