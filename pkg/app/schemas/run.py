"""
Run Configuration Schema

Everything one `build` run needs: where the data comes from, the model and
sensor parameters, and where results go.
"""

from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from app.schemas.params import Hyperparameters, Intrinsics, NoiseModel

DatasetFormat = Literal["depth", "ply", "synthetic"]
SyntheticScene = Literal["plane", "gmm"]


class RunConfig(BaseModel):
    """
    Validated configuration of a mapping run.

    For the synthetic format `dataset_path` is ignored and `scene` picks the
    analytic generator. Referenced files must exist at validation time.
    """
    dataset_path: Optional[Path] = Field(default=None, description="Dataset directory or file")
    dataset_format: DatasetFormat = Field(default="synthetic")
    scene: SyntheticScene = Field(default="plane")
    synthetic_frames: int = Field(default=100, ge=0)
    outlier_fraction: float = Field(default=0.0, ge=0, le=1)
    hyper: Hyperparameters = Field(default_factory=Hyperparameters)
    noise: NoiseModel = Field(default_factory=NoiseModel)
    intrinsics: Optional[Intrinsics] = Field(default=None)
    depth_scale: float = Field(default=1.0 / 5000.0, gt=0, description="Meters per depth PNG unit")
    workers: int = Field(default=1, ge=1)
    stride: int = Field(default=1, ge=1)
    max_frames: Optional[int] = Field(default=None, ge=0)
    output_dir: Path = Field(default=Path("output"))
    reference_path: Optional[Path] = Field(default=None)
    sample_count: int = Field(default=150_000, ge=1)
    seed: int = Field(default=0, ge=0)

    @field_validator("reference_path")
    @classmethod
    def reference_must_exist(cls, v):
        """Ensure a configured reference mesh/cloud exists."""
        if v is not None and not Path(v).exists():
            raise ValueError(f"reference not found: {v}")
        return v

    @model_validator(mode="after")
    def dataset_must_exist(self):
        """Ensure file-backed datasets point at something real."""
        if self.dataset_format != "synthetic":
            if self.dataset_path is None:
                raise ValueError(f"dataset_path is required for format '{self.dataset_format}'")
            if not Path(self.dataset_path).exists():
                raise ValueError(f"dataset not found: {self.dataset_path}")
        return self


class DatasetManifest(BaseModel):
    """Description written next to a generated dataset (manifest.json)."""
    scene: SyntheticScene
    dataset_format: DatasetFormat
    frames: int = Field(..., ge=0)
    intrinsics: Optional[Intrinsics] = None
    depth_scale: float = Field(default=1.0 / 5000.0, gt=0)
    reference: Optional[str] = Field(default=None, description="Reference file relative to the dataset")
    seed: int = Field(default=0, ge=0)
