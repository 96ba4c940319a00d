import numpy as np
import pytest

from cyforms.kahler import standard_background


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(20261014))


@pytest.fixture(scope="session")
def bg2_small():
    return standard_background(2, 8)


@pytest.fixture(scope="session")
def bg2():
    return standard_background(2, 16)


@pytest.fixture(scope="session")
def bg3_small():
    return standard_background(3, 8)
