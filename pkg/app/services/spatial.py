"""
Spatial Partition Service

Quantizes points to voxel blocks, hashes block coordinates to table slots
and routes each frame's points to the block processors that own them.
"""

import logging
from typing import TYPE_CHECKING, Dict, List, NamedTuple

import numpy as np

from app.core.exceptions import InvalidPoint
from app.models.block import BlockCoord
from app.schemas.params import Hyperparameters

if TYPE_CHECKING:
    from app.models.global_map import GlobalMap

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


# ============================================
# QUANTIZATION & HASHING
# ============================================

def point_to_block(p, hyper: Hyperparameters) -> BlockCoord:
    """
    Block coordinate containing point p.

    Args:
        p: (3,) point in meters
        hyper: Hyperparameters (voxel_size, block_side)

    Returns:
        BlockCoord: floor(p / (voxel_size * block_side)) per axis

    Raises:
        InvalidPoint: If any coordinate is NaN or infinite

    Example:
        >>> point_to_block((1.5, -0.2, 0.9), Hyperparameters(voxel_size=0.125))
        BlockCoord(x=1, y=-1, z=0)
    """
    p = np.asarray(p, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(p)):
        raise InvalidPoint(f"Point has non-finite coordinate: {p.tolist()}")
    idx = block_coords(p[None, :], hyper)[0]
    return BlockCoord(int(idx[0]), int(idx[1]), int(idx[2]))


def block_coords(points: np.ndarray, hyper: Hyperparameters) -> np.ndarray:
    """(m, 3) int64 block coordinates of finite (m, 3) points."""
    return np.floor(points / hyper.block_extent).astype(np.int64)


def hash_key(b: BlockCoord, hyper: Hyperparameters) -> int:
    """
    Spatial hash slot of a block: ((x*p1) xor (y*p2) xor (z*p3)) mod n.

    Products wrap in 64-bit unsigned arithmetic, so negative coordinates hash
    by their two's complement and the result is always in [0, n).
    """
    p1, p2, p3 = hyper.hash_primes
    h = ((b[0] * p1) & _MASK64) ^ ((b[1] * p2) & _MASK64) ^ ((b[2] * p3) & _MASK64)
    return h % hyper.table_size


# ============================================
# FRAME ROUTING
# ============================================

class RoutedFrame(NamedTuple):
    """Result of routing one frame."""
    buckets: Dict[BlockCoord, np.ndarray]
    invalid_points: int
    blocks_allocated: int


def route_frame(points, m: "GlobalMap", executor=None) -> RoutedFrame:
    """
    Partition a frame's points by block and allocate blocks seen for the first time.

    Buckets preserve input order. Points with non-finite coordinates are
    skipped and counted instead of failing the frame.

    Args:
        points: (N, 3) world points
        m: Map whose block table receives new allocations
        executor: Optional concurrent.futures executor; allocation then runs in
            parallel under the table's bucket locks

    Returns:
        RoutedFrame: buckets (coord -> int64 point indices), invalid count,
        number of newly allocated blocks
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return RoutedFrame({}, 0, 0)

    valid = np.all(np.isfinite(pts), axis=1)
    invalid = int(pts.shape[0] - np.count_nonzero(valid))
    if invalid:
        logger.warning(f"Skipping {invalid} point(s) with non-finite coordinates")
    valid_idx = np.flatnonzero(valid)
    if valid_idx.size == 0:
        return RoutedFrame({}, invalid, 0)

    coords = block_coords(pts[valid_idx], m.hyper)
    unique, inverse = np.unique(coords, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    splits = np.cumsum(np.bincount(inverse, minlength=unique.shape[0]))[:-1]
    groups = np.split(valid_idx[order], splits)

    keys: List[BlockCoord] = [BlockCoord(int(x), int(y), int(z)) for x, y, z in unique]
    if executor is None:
        allocated = sum(m.blocks.get_or_allocate(k)[1] for k in keys)
    else:
        allocated = sum(flag for _, flag in executor.map(m.blocks.get_or_allocate, keys))

    buckets = {k: g for k, g in zip(keys, groups)}
    return RoutedFrame(buckets, invalid, int(allocated))
