"""
Domain Models

In-memory types of the mixture map.
"""

from app.models.block import BlockCoord, BlockProcessor
from app.models.component import GaussianComponent, component_density
from app.models.frame import PointBatch, Pose, SensorFrame
from app.models.global_map import ComponentId, ComponentTable, GlobalMap, normalized_weights

__all__ = [
    "BlockCoord",
    "BlockProcessor",
    "GaussianComponent",
    "component_density",
    "PointBatch",
    "Pose",
    "SensorFrame",
    "ComponentId",
    "ComponentTable",
    "GlobalMap",
    "normalized_weights",
]
