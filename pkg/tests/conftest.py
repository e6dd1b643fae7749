import numpy as np
import pytest

from enums import Stream
from expansion import QuadratureSpec
from pairfn import RadialFunction, hard_core
from utils import make_rng

TEST_SEED = 7


@pytest.fixture
def rng() -> np.random.Generator:
    return make_rng(TEST_SEED, Stream.TEST)


@pytest.fixture
def rods() -> RadialFunction:
    """Pure hard core on the line, no bins outside the core."""
    return hard_core(1, 0.05, 1.0)


@pytest.fixture
def rods_with_bins() -> RadialFunction:
    """Pure hard core on the line with zero bins up to radius 2."""
    return hard_core(1, 0.1, 2.0)


@pytest.fixture
def weak_tail() -> RadialFunction:
    """Hard core followed by g = 0.05 on (1, 2]."""
    return RadialFunction.from_function(lambda r: np.full_like(r, 0.05), -1.0, 1, 0.1, 2.0)


@pytest.fixture
def quadrature() -> QuadratureSpec:
    return QuadratureSpec(seed=TEST_SEED)
