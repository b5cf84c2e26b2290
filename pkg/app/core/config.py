"""
Application Configuration Management

This module handles all mapping settings using Pydantic Settings.
Settings are loaded from environment variables (prefix DPMAP_) and from a
flat key-value config file (.env format, '#' comments allowed).
"""

from functools import lru_cache
from pathlib import Path
from typing import Annotated, Literal, Optional, Tuple

from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, NoDecode, SettingsConfigDict

from app.core.exceptions import ConfigError
from app.schemas.params import (
    DEFAULT_HASH_PRIMES,
    Hyperparameters,
    Intrinsics,
    NoiseModel,
    make_hyperparameters,
)
from app.schemas.run import RunConfig


class Settings(BaseSettings):
    """
    Mapping settings loaded from environment variables and a config file.

    Environment variables take precedence over config file values.
    Scale-dependent model parameters left unset are derived from VOXEL_SIZE.
    """

    # ============================================
    # APPLICATION SETTINGS
    # ============================================
    APP_NAME: str = Field(
        default="DP-GMM Map",
        description="Application name"
    )

    LOG_LEVEL: str = Field(
        default="INFO",
        description="Logging level: DEBUG, INFO, WARNING, ERROR, CRITICAL"
    )

    SEED: int = Field(
        default=0,
        ge=0,
        description="Seed for sampling, synthetic data and gibbs assignment"
    )

    WORKERS: int = Field(
        default=1,
        ge=1,
        le=256,
        description="Worker threads for per-block inference"
    )

    # ============================================
    # MODEL SETTINGS
    # ============================================
    ALPHA: float = Field(
        default=1.0,
        gt=0,
        description="DP concentration; split as alpha/J across the blocks of a frame"
    )

    BASE_SIGMA: Optional[float] = Field(
        default=None,
        gt=0,
        description="Base distribution scale in meters (default VOXEL_SIZE/2)"
    )

    TRUNCATION: int = Field(
        default=5,
        ge=1,
        description="Maximum number of components per block"
    )

    PRUNE_THRESHOLD: Optional[float] = Field(
        default=None,
        ge=0,
        description="Confidence floor below which components are pruned (default derived)"
    )

    PRUNE_GRACE_FRAMES: int = Field(
        default=3,
        ge=0,
        description="Frames after instantiation during which a component is never pruned"
    )

    ASSIGNMENT_MODE: Literal["map", "gibbs"] = Field(
        default="map",
        description="map = argmax assignment, gibbs = sampled assignment"
    )

    RAW_POINT_SIGMA: Optional[float] = Field(
        default=None,
        ge=0,
        description="Isotropic noise for points without covariance (default VOXEL_SIZE/4)"
    )

    # ============================================
    # SPATIAL HASH SETTINGS
    # ============================================
    VOXEL_SIZE: float = Field(
        default=0.05,
        gt=0,
        description="Voxel edge length in meters"
    )

    BLOCK_SIDE: int = Field(
        default=8,
        ge=1,
        description="Voxels per block edge"
    )

    HASH_PRIMES: Annotated[Tuple[int, int, int], NoDecode] = Field(
        default=DEFAULT_HASH_PRIMES,
        description="Spatial hash multipliers p1, p2, p3"
    )

    TABLE_SIZE: int = Field(
        default=2 ** 20,
        ge=1,
        description="Spatial hash table size n"
    )

    LOCK_STRIPES: int = Field(
        default=64,
        ge=1,
        description="Number of bucket lock stripes for block allocation"
    )

    # ============================================
    # SENSOR SETTINGS
    # ============================================
    FX: float = Field(default=525.0, gt=0, description="Focal length x (px)")
    FY: float = Field(default=525.0, gt=0, description="Focal length y (px)")
    CX: float = Field(default=319.5, ge=0, description="Principal point x (px)")
    CY: float = Field(default=239.5, ge=0, description="Principal point y (px)")
    WIDTH: int = Field(default=640, ge=1, description="Image width (px)")
    HEIGHT: int = Field(default=480, ge=1, description="Image height (px)")

    SIGMA_UV: float = Field(
        default=0.5,
        gt=0,
        description="Pixel position standard deviation (half a pixel)"
    )

    DEPTH_SIGMA_A: float = Field(default=0.0012, gt=0, description="Depth noise constant term (m)")
    DEPTH_SIGMA_B: float = Field(default=0.0019, ge=0, description="Depth noise quadratic term")
    DEPTH_SIGMA_Z0: float = Field(default=0.4, description="Depth of minimum noise (m)")

    DEPTH_SCALE: float = Field(
        default=1.0 / 5000.0,
        gt=0,
        description="Meters per 16-bit depth PNG unit (TUM convention)"
    )

    STRIDE: int = Field(
        default=1,
        ge=1,
        description="Pixel subsampling stride for back-projection"
    )

    # ============================================
    # DATASET & OUTPUT SETTINGS
    # ============================================
    DATASET_PATH: Optional[Path] = Field(default=None, description="Dataset directory")
    DATASET_FORMAT: Literal["depth", "ply", "synthetic"] = Field(default="synthetic")
    SCENE: Literal["plane", "gmm"] = Field(default="plane", description="Synthetic scene")
    SYNTHETIC_FRAMES: int = Field(default=100, ge=0)
    OUTLIER_FRACTION: float = Field(default=0.0, ge=0, le=1)
    MAX_FRAMES: Optional[int] = Field(default=None, ge=0)
    OUTPUT_DIR: Path = Field(default=Path("output"))
    REFERENCE_PATH: Optional[Path] = Field(default=None, description="Reference mesh or cloud")
    SAMPLE_COUNT: int = Field(default=150_000, ge=1, description="Points sampled for evaluation")

    # ============================================
    # VALIDATORS
    # ============================================
    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v):
        """Ensure LOG_LEVEL is valid."""
        allowed = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        v_upper = v.upper()
        if v_upper not in allowed:
            raise ValueError(f"LOG_LEVEL must be one of {allowed}")
        return v_upper

    @field_validator("HASH_PRIMES", mode="before")
    @classmethod
    def parse_primes(cls, v):
        """Accept "p1,p2,p3" strings from the config file."""
        if isinstance(v, str):
            parts = [p.strip() for p in v.strip("()[] ").split(",") if p.strip()]
            if len(parts) != 3:
                raise ValueError("HASH_PRIMES needs exactly three integers")
            return tuple(int(p) for p in parts)
        return v

    # ============================================
    # COMPUTED PROPERTIES
    # ============================================
    @property
    def block_extent(self) -> float:
        """Edge length of a voxel block in meters."""
        return self.VOXEL_SIZE * self.BLOCK_SIDE

    # ============================================
    # PYDANTIC CONFIGURATION
    # ============================================
    model_config = SettingsConfigDict(
        env_prefix="DPMAP_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
        validate_default=True
    )

    def get_hyperparameters(self) -> Hyperparameters:
        """Get the mixture hyperparameters as a validated schema."""
        return make_hyperparameters(
            alpha=self.ALPHA,
            base_sigma=self.BASE_SIGMA,
            truncation=self.TRUNCATION,
            prune_threshold=self.PRUNE_THRESHOLD,
            prune_grace_frames=self.PRUNE_GRACE_FRAMES,
            voxel_size=self.VOXEL_SIZE,
            block_side=self.BLOCK_SIDE,
            hash_primes=self.HASH_PRIMES,
            table_size=self.TABLE_SIZE,
            assignment_mode=self.ASSIGNMENT_MODE,
            raw_point_sigma=self.RAW_POINT_SIGMA,
            seed=self.SEED,
        )

    def get_noise_model(self) -> NoiseModel:
        """Get the sensor noise model."""
        return NoiseModel(
            sigma_uv=self.SIGMA_UV,
            depth_a=self.DEPTH_SIGMA_A,
            depth_b=self.DEPTH_SIGMA_B,
            depth_z0=self.DEPTH_SIGMA_Z0,
        )

    def get_intrinsics(self) -> Intrinsics:
        """Get the camera intrinsics."""
        return Intrinsics(
            fx=self.FX, fy=self.FY, cx=self.CX, cy=self.CY,
            width=self.WIDTH, height=self.HEIGHT,
        )

    def get_run_config(self) -> RunConfig:
        """
        Assemble the run configuration from these settings.

        Raises:
            ConfigError: If the combination is invalid (for example a missing dataset)
        """
        try:
            return RunConfig(
                dataset_path=self.DATASET_PATH,
                dataset_format=self.DATASET_FORMAT,
                scene=self.SCENE,
                synthetic_frames=self.SYNTHETIC_FRAMES,
                outlier_fraction=self.OUTLIER_FRACTION,
                hyper=self.get_hyperparameters(),
                noise=self.get_noise_model(),
                intrinsics=self.get_intrinsics(),
                depth_scale=self.DEPTH_SCALE,
                workers=self.WORKERS,
                stride=self.STRIDE,
                max_frames=self.MAX_FRAMES,
                output_dir=self.OUTPUT_DIR,
                reference_path=self.REFERENCE_PATH,
                sample_count=self.SAMPLE_COUNT,
                seed=self.SEED,
            )
        except ValidationError as e:
            raise ConfigError(f"Invalid run configuration: {e}") from e


# ============================================
# SETTINGS INSTANCE (SINGLETON PATTERN)
# ============================================
@lru_cache()
def get_settings(config_file: Optional[str] = None) -> Settings:
    """
    Create and cache settings instance.

    Uses lru_cache so every caller asking for the same config file shares
    one instance.

    Args:
        config_file: Optional path of a key-value config file; defaults to .env

    Returns:
        Settings: Mapping settings instance
    """
    if config_file is None:
        return Settings()
    return Settings(_env_file=config_file)
