"""
Shared fixtures for the swave test suite
"""

import numpy as np
import pytest

from src.swave.fem1d import assemble_operators
from src.swave.models import SpatialMesh
from src.swave.problem import builtin


@pytest.fixture
def coarse_mesh():
    # (-1, 1) with h = 0.5
    return SpatialMesh(-1.0, 1.0, 4)


@pytest.fixture
def fine_mesh():
    return SpatialMesh(-1.0, 1.0, 1024)


@pytest.fixture
def fine_ops(fine_mesh):
    return assemble_operators(fine_mesh)


@pytest.fixture
def small_mesh():
    return SpatialMesh(-1.0, 1.0, 32)


@pytest.fixture
def small_ops(small_mesh):
    return assemble_operators(small_mesh)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["test1", "test2"])
def noisy_spec(request):
    return builtin(request.param)


@pytest.fixture
def quiet_spec():
    """Noise-free wave with u0 = sin(pi x)"""
    return builtin("deterministic", mode=1)
