import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
os.environ.setdefault("MULTIDIV_LOG_LEVEL", "WARNING")

from diver import VolumeStructure  # noqa: E402
from fields import ChartDomain  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def cube3():
    return ChartDomain.cube(3, -1.0, 1.0, 0.1)


@pytest.fixture
def lebesgue3(cube3):
    return VolumeStructure.lebesgue(cube3)


@pytest.fixture
def gaussian3(cube3):
    return VolumeStructure.gaussian(cube3)


@pytest.fixture
def quadrature():
    from models import QuadratureSpec

    return QuadratureSpec(nodes_per_axis=12, panels=2)
