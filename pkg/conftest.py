"""
Shared Test Fixtures

Small cameras, hyperparameters and map builders used across the test
modules. End-to-end scenarios are marked `slow`; skip them with
`pytest -m "not slow"`.
"""

import numpy as np
import pytest

from app.models.block import BlockProcessor
from app.models.component import GaussianComponent
from app.models.global_map import GlobalMap
from app.schemas.params import Intrinsics, make_hyperparameters


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end scenarios that take several seconds")


@pytest.fixture
def hyper():
    """Default hyperparameters at 5 cm voxels."""
    return make_hyperparameters(voxel_size=0.05)


@pytest.fixture
def small_intrinsics():
    """A 64x48 camera with the field of view of a 640x480 Kinect."""
    return Intrinsics(fx=52.5, fy=52.5, cx=31.5, cy=23.5, width=64, height=48)


@pytest.fixture
def kinect_intrinsics():
    """Full-resolution 640x480 Kinect camera."""
    return Intrinsics(fx=525.0, fy=525.0, cx=319.5, cy=239.5, width=640, height=480)


@pytest.fixture
def make_map():
    """
    Factory building a GlobalMap from (mean, covariance, weight[, confidence]) tuples.

    Each component is stored as a mature component whose scatter reproduces
    the given covariance up to the regularization term.
    """
    def factory(components, hyper=None):
        hyper = hyper or make_hyperparameters(voxel_size=0.05, truncation=8)
        m = GlobalMap(hyper)
        for entry in components:
            mean, cov, weight = entry[:3]
            confidence = entry[3] if len(entry) > 3 else 1.0
            mean = np.asarray(mean, dtype=np.float64)
            cov = np.asarray(cov, dtype=np.float64)
            coord = tuple(int(c) for c in np.floor(mean / hyper.block_extent))
            proc, _ = m.blocks.get_or_allocate(coord)
            scatter = (cov - hyper.regularization * np.eye(3)) * (weight - 1.0)
            proc.set_component(proc.size, GaussianComponent(
                weight=float(weight), mean=mean, scatter=scatter,
                confidence=float(confidence), prior_cov=cov,
            ))
            proc.point_count += int(weight)
        return m
    return factory


@pytest.fixture
def empty_block():
    return BlockProcessor((0, 0, 0), truncation=5)
