"""
Sensor Frame Models

Containers for one time step of input: a depth image with its camera, or a
raw batch of world points.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from app.core.exceptions import ConfigError
from app.schemas.params import Intrinsics


@dataclass
class Pose:
    """Rigid camera-to-world transform x_w = R x_c + t."""
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=1e-6):
            raise ConfigError("Pose rotation is not orthonormal")
        if np.linalg.det(self.rotation) <= 0:
            raise ConfigError("Pose rotation must have determinant +1")


@dataclass
class SensorFrame:
    """Depth image in meters (0 = invalid), camera intrinsics and pose."""
    depth: np.ndarray
    intrinsics: Intrinsics
    pose: Pose = field(default_factory=Pose)
    timestamp: float = 0.0

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ConfigError(
                f"Depth shape {self.depth.shape} does not match intrinsics "
                f"{self.intrinsics.height}x{self.intrinsics.width}"
            )


@dataclass
class PointBatch:
    """World points with optional per-point (N, 3, 3) covariances."""
    points: np.ndarray
    covariances: Optional[np.ndarray] = None
    timestamp: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.covariances is not None:
            self.covariances = np.asarray(self.covariances, dtype=np.float64).reshape(-1, 3, 3)
            if self.covariances.shape[0] != self.points.shape[0]:
                raise ConfigError("Covariance count does not match point count")

    def __len__(self) -> int:
        return self.points.shape[0]
