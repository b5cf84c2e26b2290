"""
Sensor Model Testing

Depth noise, covariance propagation and back-projection.
"""

import numpy as np
import pytest

from app.core.exceptions import InvalidDepth
from app.models.frame import Pose, SensorFrame
from app.schemas.params import Intrinsics, NoiseModel
from app.services.sensor import backproject, depth_sigma, jacobian, point_covariance, project


def test_depth_sigma_example():
    """Test the Kinect curve at 1.4 m."""
    assert depth_sigma(1.4) == pytest.approx(0.0012 + 0.0019 * 1.0)


@pytest.mark.parametrize("z", [0.0, -1.0])
def test_point_covariance_rejects_bad_depth(z, kinect_intrinsics):
    with pytest.raises(InvalidDepth):
        point_covariance(320, 240, z, kinect_intrinsics)


def _random_intrinsics(rng):
    width = int(rng.integers(64, 1281))
    height = int(rng.integers(48, 961))
    return Intrinsics(fx=rng.uniform(50.0, 1500.0), fy=rng.uniform(50.0, 1500.0),
                      cx=rng.uniform(0.0, width - 1), cy=rng.uniform(0.0, height - 1),
                      width=width, height=height)


def test_covariance_properties():
    """Test symmetry, PSD and the axial variance over 1e5 random pixels, depths and cameras."""
    rng = np.random.default_rng(0)
    noise = NoiseModel()
    covs, var_z = [], []
    for _ in range(100_000):
        intr = _random_intrinsics(rng)
        u = rng.uniform(0, intr.width)
        v = rng.uniform(0, intr.height)
        z = rng.uniform(0.3, 8.0)
        covs.append(point_covariance(u, v, z, intr, noise))
        var_z.append(noise.depth_sigma(z) ** 2)
    covs = np.stack(covs)
    var_z = np.array(var_z)
    assert np.array_equal(covs, np.swapaxes(covs, 1, 2))
    trace = np.trace(covs, axis1=1, axis2=2)
    assert np.all(np.linalg.eigvalsh(covs).min(axis=1) >= -1e-12 * trace)
    assert np.allclose(covs[:, 2, 2], var_z, rtol=1e-15, atol=0)


def test_covariance_is_jacobian_propagation(kinect_intrinsics):
    """Test the closed form against J diag(su^2, sv^2, sz^2) J^T."""
    noise = NoiseModel()
    u, v, z = 100.0, 400.0, 2.5
    jac = jacobian(u, v, kinect_intrinsics)
    expected = jac @ np.diag([noise.sigma_uv ** 2, noise.sigma_uv ** 2, noise.depth_sigma(z) ** 2]) @ jac.T
    assert np.allclose(point_covariance(u, v, z, kinect_intrinsics, noise), expected, rtol=1e-12, atol=0)


def test_covariance_grows_with_depth(kinect_intrinsics):
    """Test that the axial variance and the trace grow with depth beyond 0.4 m."""
    zs = np.linspace(0.45, 6.0, 50)
    covs = [point_covariance(100.0, 50.0, z, kinect_intrinsics) for z in zs]
    assert np.all(np.diff([c[2, 2] for c in covs]) > 0)
    assert np.all(np.diff([np.trace(c) for c in covs]) > 0)


def test_backproject_roundtrip(kinect_intrinsics):
    """Test that every back-projected point projects to its own pixel."""
    rng = np.random.default_rng(1)
    depth = rng.uniform(0.5, 5.0, size=(480, 640))
    pose = Pose(np.diag([1.0, -1.0, -1.0]), [0.3, -0.2, 2.0])
    frame = SensorFrame(depth, kinect_intrinsics, pose)
    points, covs = backproject(frame)
    assert points.shape == (640 * 480, 3)
    assert covs.shape == (640 * 480, 3, 3)
    uvz = project(points, frame)
    vs, us = np.mgrid[0:480, 0:640]
    assert np.max(np.abs(uvz[:, 0] - us.ravel())) < 1e-9
    assert np.max(np.abs(uvz[:, 1] - vs.ravel())) < 1e-9
    assert np.max(np.abs(uvz[:, 2] - depth.ravel())) < 1e-9


def test_backproject_skips_invalid_pixels(small_intrinsics):
    """Test that zero, negative and non-finite depths are dropped."""
    depth = np.full((48, 64), 1.0)
    depth[0, 0] = 0.0
    depth[1, 1] = -2.0
    depth[2, 2] = np.nan
    depth[3, 3] = np.inf
    points, covs = backproject(SensorFrame(depth, small_intrinsics))
    assert points.shape[0] == 48 * 64 - 4
    assert np.all(np.isfinite(points))
    assert np.allclose(points[:, 2], 1.0)


def test_backproject_world_covariance_rotates(small_intrinsics):
    """Test that world covariances are R Sigma R^T and stay symmetric."""
    depth = np.full((48, 64), 2.0)
    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    _, cam = backproject(SensorFrame(depth, small_intrinsics))
    _, world = backproject(SensorFrame(depth, small_intrinsics, Pose(rot, [1.0, 2.0, 3.0])))
    assert np.allclose(world, rot @ cam @ rot.T, atol=1e-18)
    assert np.array_equal(world, np.swapaxes(world, 1, 2))


def test_backproject_stride_and_empty(small_intrinsics):
    depth = np.full((48, 64), 1.0)
    points, _ = backproject(SensorFrame(depth, small_intrinsics), stride=4)
    assert points.shape[0] == 12 * 16
    points, covs = backproject(SensorFrame(np.zeros((48, 64)), small_intrinsics))
    assert points.shape == (0, 3)
    assert covs.shape == (0, 3, 3)
