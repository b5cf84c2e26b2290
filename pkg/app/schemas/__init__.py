"""
Schemas Package

Pydantic models for parameters, run configuration and reports.
"""

from app.schemas.params import (
    Hyperparameters,
    Intrinsics,
    NoiseModel,
    make_hyperparameters,
)
from app.schemas.reports import EvalReport, FrameStats
from app.schemas.run import DatasetManifest, RunConfig

__all__ = [
    "Hyperparameters",
    "Intrinsics",
    "NoiseModel",
    "make_hyperparameters",
    "EvalReport",
    "FrameStats",
    "RunConfig",
    "DatasetManifest",
]
