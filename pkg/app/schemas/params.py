"""
Model & Sensor Parameter Schemas

Pydantic models for the mixture hyperparameters, the sensor intrinsics and
the depth noise model. All of them are frozen values that can be shared
between worker threads.
"""

import math
from typing import Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.core.exceptions import ConfigError, InvalidDepth

DEFAULT_HASH_PRIMES = (73856093, 19349669, 83492791)
# points at 1 sigma a component must gather to survive pruning
PRUNE_SUPPORT_POINTS = 4


# ============================================
# MIXTURE HYPERPARAMETERS
# ============================================

class Hyperparameters(BaseModel):
    """
    Hyperparameters of the Dirichlet-process mixture and its spatial hash.

    Scale-dependent defaults (base_sigma, prune_threshold, raw_point_sigma)
    are derived from voxel_size when left unset.
    """
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(default=1.0, gt=0, description="DP concentration")
    base_sigma: float = Field(default=0.025, gt=0, description="Base distribution scale (m)")
    truncation: int = Field(default=5, ge=1, description="Max components per block")
    prune_threshold: float = Field(default=0.0, ge=0, description="Confidence floor for pruning")
    prune_grace_frames: int = Field(default=3, ge=0, description="Frames a new component is protected")
    voxel_size: float = Field(default=0.05, gt=0, description="Voxel edge length (m)")
    block_side: int = Field(default=8, ge=1, description="Voxels per block edge")
    hash_primes: Tuple[int, int, int] = Field(default=DEFAULT_HASH_PRIMES)
    table_size: int = Field(default=2 ** 20, ge=1, description="Hash table slots n")
    assignment_mode: Literal["map", "gibbs"] = Field(default="map")
    raw_point_sigma: float = Field(default=0.0125, ge=0, description="Noise for points without covariance (m)")
    seed: int = Field(default=0, ge=0, description="Seed for gibbs assignment")

    @model_validator(mode="before")
    @classmethod
    def fill_scale_defaults(cls, data):
        """Derive unset scale parameters from the voxel size."""
        if not isinstance(data, dict):
            return data
        data = dict(data)
        try:
            voxel = float(data.get("voxel_size") or 0.05)
        except (TypeError, ValueError):
            return data
        if data.get("base_sigma") is None:
            data["base_sigma"] = voxel / 2.0
        if data.get("raw_point_sigma") is None:
            data["raw_point_sigma"] = voxel / 4.0
        if data.get("prune_threshold") is None:
            try:
                data["prune_threshold"] = default_prune_threshold(float(data["base_sigma"]))
            except (TypeError, ValueError, ZeroDivisionError):
                pass
        return data

    @field_validator("hash_primes")
    @classmethod
    def validate_primes(cls, v):
        """Ensure the three hash multipliers are positive and pairwise coprime."""
        if any(p <= 0 for p in v):
            raise ValueError("hash primes must be positive")
        for i in range(3):
            for j in range(i + 1, 3):
                if math.gcd(v[i], v[j]) != 1:
                    raise ValueError("hash primes must be pairwise coprime")
        return v

    @property
    def block_extent(self) -> float:
        """Edge length of one voxel block in meters."""
        return self.voxel_size * self.block_side

    @property
    def regularization(self) -> float:
        """Diagonal loading added to covariances before inversion (m^2)."""
        return (1e-4 * self.voxel_size) ** 2

    @property
    def tau2(self) -> float:
        """Squared noise scale of the fidelity discount."""
        return self.voxel_size ** 2

    @property
    def reference_density(self) -> float:
        """Density that maps to occupancy 1 - 1/e."""
        return 1.0 / self.voxel_size ** 3


def default_prune_threshold(base_sigma: float) -> float:
    """
    Fidelity of PRUNE_SUPPORT_POINTS points 1 sigma away from a base-distribution
    component with zero measurement noise.

    A component seeded by one point starts at most at the base peak
    (2 pi base_sigma^2)^-1.5, about 0.41 of this value, so it is pruned
    unless later points reinforce it.
    """
    norm = (2.0 * math.pi * base_sigma ** 2) ** -1.5
    return PRUNE_SUPPORT_POINTS * norm * math.exp(-0.5)


def make_hyperparameters(**overrides) -> Hyperparameters:
    """
    Build Hyperparameters, converting validation failures to ConfigError.

    Args:
        **overrides: Field values; None means "use the derived default"

    Returns:
        Hyperparameters: Validated hyperparameters

    Example:
        >>> make_hyperparameters(voxel_size=0.1).base_sigma
        0.05
    """
    try:
        return Hyperparameters(**overrides)
    except ValidationError as e:
        raise ConfigError(f"Invalid hyperparameters: {e}") from e


# ============================================
# SENSOR MODEL
# ============================================

class Intrinsics(BaseModel):
    """Pinhole camera intrinsics in pixels."""
    model_config = ConfigDict(frozen=True)

    fx: float = Field(..., gt=0)
    fy: float = Field(..., gt=0)
    cx: float = Field(..., ge=0)
    cy: float = Field(..., ge=0)
    width: int = Field(..., ge=1)
    height: int = Field(..., ge=1)

    @model_validator(mode="after")
    def check_principal_point(self):
        """Ensure the principal point lies inside the image."""
        if not (self.cx < self.width and self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        return self


class NoiseModel(BaseModel):
    """
    Pixel and depth noise of an RGB-D sensor.

    The default depth curve is the axial Kinect model
    sigma_z(z) = a + b * (z - z0)^2.
    """
    model_config = ConfigDict(frozen=True)

    sigma_uv: float = Field(default=0.5, gt=0, description="Pixel std (px)")
    depth_a: float = Field(default=0.0012, gt=0, description="Constant depth noise (m)")
    depth_b: float = Field(default=0.0019, ge=0, description="Quadratic depth noise coefficient")
    depth_z0: float = Field(default=0.4, description="Depth of minimum noise (m)")

    def depth_sigma(self, z):
        """
        Axial depth standard deviation at depth z.

        Args:
            z: Depth in meters, scalar or array, must be > 0

        Returns:
            Standard deviation in meters (same shape as z)

        Raises:
            InvalidDepth: If any z is not a positive finite number
        """
        z_arr = np.asarray(z, dtype=np.float64)
        if not np.all(np.isfinite(z_arr)) or np.any(z_arr <= 0):
            raise InvalidDepth(f"Depth must be positive and finite, got {z}")
        sigma = self.depth_a + self.depth_b * (z_arr - self.depth_z0) ** 2
        return float(sigma) if sigma.ndim == 0 else sigma
