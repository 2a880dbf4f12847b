import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("lanekeep", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lanekeep")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
