"""
Sensor Model Service

Turns depth images into world points with per-point noise covariances.
The covariance propagates pixel and depth noise through the back-projection
Jacobian: Sigma_x = J diag(sigma_u^2, sigma_v^2, sigma_z^2) J^T.
"""

import logging
from typing import Optional, Tuple

import numpy as np

from app.core.exceptions import InvalidDepth
from app.models.frame import SensorFrame
from app.schemas.params import Intrinsics, NoiseModel

logger = logging.getLogger(__name__)


def depth_sigma(z, noise: Optional[NoiseModel] = None):
    """
    Axial depth noise sigma_z(z) = a + b * (z - z0)^2 in meters.

    Example:
        depth_sigma(1.4) ~ 0.0031 (1.2 mm + 1.9 mm)
    """
    return (noise or NoiseModel()).depth_sigma(z)


def jacobian(u: float, v: float, intr: Intrinsics) -> np.ndarray:
    """
    Back-projection Jacobian for pixel (u, v).

    Returns:
        [[1/fx, 0, (u-cx)/fx], [0, 1/fy, (v-cy)/fy], [0, 0, 1]]
    """
    return np.array([
        [1.0 / intr.fx, 0.0, (u - intr.cx) / intr.fx],
        [0.0, 1.0 / intr.fy, (v - intr.cy) / intr.fy],
        [0.0, 0.0, 1.0],
    ])


def _covariances(du, dv, var_z, intr: Intrinsics, noise: NoiseModel) -> np.ndarray:
    """Closed form of J diag(su^2, sv^2, sz^2) J^T, exactly symmetric."""
    var_uv = noise.sigma_uv ** 2
    ax = du / intr.fx
    ay = dv / intr.fy
    out = np.empty(np.shape(du) + (3, 3))
    out[..., 0, 0] = var_uv / intr.fx ** 2 + ax * ax * var_z
    out[..., 1, 1] = var_uv / intr.fy ** 2 + ay * ay * var_z
    out[..., 2, 2] = var_z
    out[..., 0, 1] = out[..., 1, 0] = ax * ay * var_z
    out[..., 0, 2] = out[..., 2, 0] = ax * var_z
    out[..., 1, 2] = out[..., 2, 1] = ay * var_z
    return out


def point_covariance(u: float, v: float, z: float, intr: Intrinsics,
                     noise: Optional[NoiseModel] = None) -> np.ndarray:
    """
    Camera-frame covariance of the point observed at pixel (u, v) and depth z.

    Args:
        u, v: Pixel coordinates
        z: Depth in meters (> 0)
        intr: Camera intrinsics
        noise: Noise model (defaults to half-pixel / Kinect depth model)

    Returns:
        (3, 3) symmetric PSD matrix in m^2; entry (2, 2) equals sigma_z(z)^2

    Raises:
        InvalidDepth: If z <= 0
    """
    noise = noise or NoiseModel()
    var_z = noise.depth_sigma(z) ** 2
    return _covariances(np.float64(u - intr.cx), np.float64(v - intr.cy), var_z, intr, noise)


def backproject(frame: SensorFrame, noise: Optional[NoiseModel] = None,
                stride: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Back-project every valid depth pixel to a world point with covariance.

    Pixels with zero, negative or non-finite depth are skipped.

    Args:
        frame: Depth image, intrinsics and camera-to-world pose
        noise: Noise model
        stride: Keep every stride-th pixel along both image axes

    Returns:
        (points (N, 3), covariances (N, 3, 3)) in world coordinates,
        ordered row-major over the kept pixels
    """
    noise = noise or NoiseModel()
    intr = frame.intrinsics
    depth = frame.depth[::stride, ::stride]
    vs, us = np.mgrid[0:frame.depth.shape[0]:stride, 0:frame.depth.shape[1]:stride]
    valid = np.isfinite(depth) & (depth > 0)
    if not np.any(valid):
        return np.zeros((0, 3)), np.zeros((0, 3, 3))

    z = depth[valid]
    du = us[valid].astype(np.float64) - intr.cx
    dv = vs[valid].astype(np.float64) - intr.cy
    cam = np.stack([du * z / intr.fx, dv * z / intr.fy, z], axis=1)

    var_z = noise.depth_sigma(z) ** 2
    cov_cam = _covariances(du, dv, var_z, intr, noise)

    rot = frame.pose.rotation
    points = cam @ rot.T + frame.pose.translation
    cov_world = np.einsum("ij,njk,lk->nil", rot, cov_cam, rot)
    cov_world = 0.5 * (cov_world + np.swapaxes(cov_world, 1, 2))
    return points, cov_world


def project(points: np.ndarray, frame: SensorFrame) -> np.ndarray:
    """
    Project world points into the frame's image.

    Returns:
        (N, 3) array of (u, v, z) with z the camera-frame depth
    """
    intr = frame.intrinsics
    cam = (np.asarray(points, dtype=np.float64) - frame.pose.translation) @ frame.pose.rotation
    z = cam[:, 2]
    if np.any(z <= 0):
        raise InvalidDepth("Point behind the camera cannot be projected")
    u = intr.fx * cam[:, 0] / z + intr.cx
    v = intr.fy * cam[:, 1] / z + intr.cy
    return np.stack([u, v, z], axis=1)
