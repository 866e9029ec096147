import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def normal_pool(rng):
    """Small standard-normal block pool (n, g=16) for unit tests."""
    return rng.standard_normal((512, 16))
