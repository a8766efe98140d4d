import numpy as np
import pytest

from eend_lab.numerics.rng import Rng


def normal(rng, shape):
    return rng.normal_array(int(np.prod(shape))).reshape(shape)


@pytest.fixture
def rng():
    return Rng(12345)
