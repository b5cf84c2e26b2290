"""
Run Report Schemas

Per-frame statistics and the end-of-run evaluation report.
"""

from typing import Dict, Optional

from pydantic import BaseModel, Field


class FrameStats(BaseModel):
    """Counters produced by one call to process_frame."""
    frame_index: int = Field(default=0, ge=0)
    points_routed: int = Field(default=0, ge=0)
    invalid_points: int = Field(default=0, ge=0)
    blocks_touched: int = Field(default=0, ge=0, description="J for this frame")
    blocks_allocated: int = Field(default=0, ge=0)
    components_created: int = Field(default=0, ge=0)
    components_pruned: int = Field(default=0, ge=0)
    wall_time: float = Field(default=0.0, ge=0, description="Seconds")

    def merge(self, other: "FrameStats") -> "FrameStats":
        """Sum the counters of two partial stats (commutative)."""
        return FrameStats(
            frame_index=max(self.frame_index, other.frame_index),
            points_routed=self.points_routed + other.points_routed,
            invalid_points=self.invalid_points + other.invalid_points,
            blocks_touched=self.blocks_touched + other.blocks_touched,
            blocks_allocated=self.blocks_allocated + other.blocks_allocated,
            components_created=self.components_created + other.components_created,
            components_pruned=self.components_pruned + other.components_pruned,
            wall_time=self.wall_time + other.wall_time,
        )


class EvalReport(BaseModel):
    """
    Summary of a mapping run.

    Distances are cloud-to-reference statistics in centimeters; they are
    None when no reference was configured.
    """
    mean_distance_cm: Optional[float] = Field(default=None, ge=0)
    std_distance_cm: Optional[float] = Field(default=None, ge=0)
    sample_count: int = Field(default=0, ge=0)
    frames: int = Field(default=0, ge=0)
    points: int = Field(default=0, ge=0)
    component_count: int = Field(default=0, ge=0)
    block_count: int = Field(default=0, ge=0)
    parameter_bytes: int = Field(default=0, ge=0)
    table_bytes: int = Field(default=0, ge=0)
    frame_time_p50: float = Field(default=0.0, ge=0)
    frame_time_p90: float = Field(default=0.0, ge=0)
    frame_time_p99: float = Field(default=0.0, ge=0)
    frames_per_second: float = Field(default=0.0, ge=0)
    total_time: float = Field(default=0.0, ge=0)

    def to_key_values(self, include_timing: bool = True) -> Dict[str, str]:
        """
        Flatten the report for the key-value report file.

        Args:
            include_timing: Whether wall-clock fields are included

        Returns:
            Ordered mapping of field name to formatted value
        """
        timing = {"frame_time_p50", "frame_time_p90", "frame_time_p99", "frames_per_second", "total_time"}
        out = {}
        for name, value in self.model_dump().items():
            if not include_timing and name in timing:
                continue
            if value is None:
                out[name] = "none"
            elif isinstance(value, float):
                out[name] = repr(value)
            else:
                out[name] = str(value)
        return out
