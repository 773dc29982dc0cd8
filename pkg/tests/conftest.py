import numpy as np
import pytest

from concavity_lab.domain import ConvexDomain, GridSpec, build_mask
from concavity_lab.solver import solve_poisson

# frozen reference values computed by independent oracles (see tests/oracles.py)
SQUARE_TORSION_CENTER = 0.0736713532815138
J01 = 2.404825557695773
RADIAL_GAMMA_HALF_CENTER = 0.04350022696514246


def disk_mask(h):
    d = ConvexDomain.disk()
    return build_mask(d, GridSpec.covering(d, h))


@pytest.fixture(scope="session")
def disk16():
    return disk_mask(1 / 16)


@pytest.fixture(scope="session")
def disk32():
    return disk_mask(1 / 32)


@pytest.fixture(scope="session")
def square17():
    sq = ConvexDomain.rectangle(-1, 1, -1, 1)
    return build_mask(sq, GridSpec(17, 17, (-1.25, 1.25, -1.25, 1.25)))


@pytest.fixture(scope="session")
def torsion32(disk32):
    return solve_poisson(disk32, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
