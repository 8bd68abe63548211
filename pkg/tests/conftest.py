import numpy as np
import pytest

from robustmal._runtime import tune_allocator

tune_allocator()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
