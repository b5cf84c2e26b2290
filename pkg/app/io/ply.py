"""
PLY Point Cloud I/O

Exports a map as a colored point cloud (sampled points or component means)
and reads point clouds back. Colors encode relative confidence from red
(high) to blue (low).
"""

import logging
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError

from app.core.exceptions import DatasetError, EmptyMap, ExportError
from app.models.global_map import GlobalMap
from app.services import field
from app.services.refinement import relative_confidence

logger = logging.getLogger(__name__)

ExportMode = Literal["samples", "means"]

VERTEX_DTYPE = [
    ("x", "f4"), ("y", "f4"), ("z", "f4"),
    ("red", "u1"), ("green", "u1"), ("blue", "u1"),
]


def confidence_colors(rel: np.ndarray) -> np.ndarray:
    """Map relative confidence in [0, 1] to RGB, red = 1 and blue = 0."""
    rel = np.clip(np.asarray(rel, dtype=np.float64), 0.0, 1.0)
    rgb = np.zeros((rel.shape[0], 3), dtype=np.uint8)
    rgb[:, 0] = np.round(255.0 * rel).astype(np.uint8)
    rgb[:, 2] = np.round(255.0 * (1.0 - rel)).astype(np.uint8)
    return rgb


def write_points(points: np.ndarray, colors: Optional[np.ndarray], path: Union[str, Path]) -> Path:
    """
    Write a binary little-endian vertex-only PLY.

    Raises:
        ExportError: If the file cannot be written
    """
    path = Path(path)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if colors is None:
        colors = np.full((points.shape[0], 3), 255, dtype=np.uint8)
    elements = np.empty(points.shape[0], dtype=VERTEX_DTYPE)
    for i, name in enumerate(("x", "y", "z")):
        elements[name] = points[:, i]
    for i, name in enumerate(("red", "green", "blue")):
        elements[name] = colors[:, i]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        el = PlyElement.describe(elements, "vertex")
        PlyData([el], byte_order="<").write(str(path))
    except OSError as e:
        raise ExportError(f"Cannot write {path}: {e}") from e
    return path


def _downsample_means(means, weights, rel, voxel_size):
    """One point per occupied voxel: weight-averaged mean, highest confidence."""
    keys = np.floor(means / voxel_size).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    groups = int(inverse.max()) + 1
    wsum = np.bincount(inverse, weights=weights, minlength=groups)
    out = np.stack([np.bincount(inverse, weights=weights * means[:, i], minlength=groups)
                    for i in range(3)], axis=1) / wsum[:, None]
    top = np.zeros(groups)
    np.maximum.at(top, inverse, rel)
    return out, top


def export_ply(m: GlobalMap, count: int, path: Union[str, Path], mode: ExportMode = "samples",
               seed: int = 0, downsample: Optional[float] = None) -> Path:
    """
    Export the map as a colored point cloud.

    Args:
        m: Non-empty map
        count: Number of sampled points (samples mode only)
        path: Output .ply path
        mode: "samples" draws `count` points from the mixture; "means"
            writes one vertex per component
        seed: Sampling seed; the same seed gives a byte-identical file
        downsample: Voxel size for thinning the means (means mode only)

    Returns:
        Path: Written file

    Raises:
        EmptyMap: If the map has no component
        ExportError: If the file cannot be written
    """
    table = m.component_table()
    rel_by_id = relative_confidence(m)
    if mode == "samples":
        samples = field.sample(m, count, seed=seed)
        rel = np.array([rel_by_id[cid] for cid in samples.ids])[samples.sources]
        points = samples.points
    elif mode == "means":
        if len(table) == 0:
            raise EmptyMap("Map has no component to export")
        points = table.means
        rel = np.array([rel_by_id[cid] for cid in table.ids])
        if downsample:
            points, rel = _downsample_means(points, table.weights, rel, downsample)
    else:
        raise ExportError(f"Unknown export mode '{mode}'")

    out = write_points(points, confidence_colors(rel), path)
    logger.info(f"Exported {points.shape[0]} vertices ({mode}) to {out}")
    return out


def import_ply(path: Union[str, Path]) -> np.ndarray:
    """
    Read the vertex positions of a PLY file.

    Returns:
        (N, 3) float64 array; N may be 0

    Raises:
        DatasetError: If the file is missing or not a readable PLY
    """
    path = Path(path)
    try:
        data = PlyData.read(str(path))
        vertex = data["vertex"]
    except (OSError, ValueError, KeyError, PlyParseError) as e:
        raise DatasetError(f"Cannot read PLY {path}: {e}") from e
    if vertex.count == 0:
        return np.zeros((0, 3))
    return np.stack([np.asarray(vertex[a], dtype=np.float64) for a in ("x", "y", "z")], axis=1)
