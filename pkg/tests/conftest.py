import numpy as np
import pytest
from threadpoolctl import threadpool_limits

# single-threaded BLAS keeps float reductions bit-reproducible
threadpool_limits(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
