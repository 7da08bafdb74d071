import numpy as np
import pytest

from helpers import make_texture


@pytest.fixture
def texture128():
    return make_texture(128, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
