import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from privmech.dist_models import DistributionSpec, PrivacyLadder

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def unit_uniform():
    return DistributionSpec.uniform([1.0]), PrivacyLadder((1.0,), (0.0,))


@pytest.fixture(scope="session")
def two_level_uniform():
    """Levels Uniform[0,1], Uniform[0,2] with costs (0.1, 0.5)."""
    return DistributionSpec.uniform([1.0, 2.0]), PrivacyLadder((0.5, 1.0), (0.1, 0.5))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
