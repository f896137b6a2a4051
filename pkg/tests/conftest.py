import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)


def rand_t4(rng, n, c, h, w, scale=1.0):
    return (rng.standard_normal((n, c, h, w)) * scale).astype(np.float32)
