import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "mcpad",
    max_examples=40,
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("mcpad")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
