"""
conftest.py - shared fixtures for the tubeness test suite.
"""

import numpy as np
import pytest

from tubeness.ologit import PATANKAR_PUBLISHED, WARDLAW_PUBLISHED
from tubeness.phantom import PhantomSpec, Tube
from tubeness.volume import Mask3D, Volume3D


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def wardlaw_model():
    return WARDLAW_PUBLISHED


@pytest.fixture
def patankar_model():
    return PATANKAR_PUBLISHED


@pytest.fixture
def full_roi():
    def make(shape, spacing=(1.0, 1.0, 1.0)):
        return Mask3D(np.ones(shape, dtype=bool), spacing)

    return make


@pytest.fixture
def line_volume():
    """Bright Gaussian line along z through voxel (c, c) with sigma r mm."""

    def make(n=24, r=1.2, amplitude=3000.0):
        c = n // 2
        y, x = np.mgrid[0:n, 0:n].astype(np.float64)
        plane = amplitude * np.exp(-((x - c) ** 2 + (y - c) ** 2) / (2.0 * r * r))
        return Volume3D(np.broadcast_to(plane, (n, n, n)), (1.0, 1.0, 1.0))

    return make


@pytest.fixture
def two_tube_spec():
    """Small bright phantom with two axis-aligned tubes far apart."""
    tubes = (
        Tube((10.0, 10.0, 16.0), (0.0, 0.0, 1.0), 1.0, 10.0),
        Tube((22.0, 22.0, 16.0), (1.0, 0.0, 0.0), 1.0, 8.0),
    )
    return PhantomSpec(dims=(32, 32, 32), tubes=tubes, seed=3)
