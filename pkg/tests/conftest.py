import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from m2wllm import tensor as T

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def float64():
    """Unit tests run at 64-bit; training-scale tests opt into 32-bit themselves."""
    prev = T.get_dtype()
    T.set_precision(64)
    yield
    T.set_precision(64 if prev == np.float64 else 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
