"""
Spatial Partition Testing

Block quantization, the spatial hash and frame routing.
"""

import numpy as np
import pytest

from app.core.exceptions import InvalidPoint
from app.models.block import BlockCoord
from app.models.global_map import GlobalMap
from app.schemas.params import make_hyperparameters
from app.services.spatial import hash_key, point_to_block, route_frame


def test_point_to_block_example():
    """Test flooring per axis, including negative coordinates."""
    hyper = make_hyperparameters(voxel_size=0.125)
    assert point_to_block((1.5, -0.2, 0.9), hyper) == BlockCoord(1, -1, 0)
    assert point_to_block((0.0, 0.0, 0.0), hyper) == BlockCoord(0, 0, 0)
    assert point_to_block((-1e-9, 1.0, 2.0), hyper) == BlockCoord(-1, 1, 2)


@pytest.mark.parametrize("p", [(float("nan"), 0, 0), (0, float("inf"), 0)])
def test_point_to_block_invalid(p, hyper):
    """Test that non-finite points raise InvalidPoint."""
    with pytest.raises(InvalidPoint):
        point_to_block(p, hyper)


def test_hash_key_values(hyper):
    """Test the prime-multiplied xor hash."""
    assert hash_key(BlockCoord(0, 0, 0), hyper) == 0
    assert hash_key(BlockCoord(1, 0, 0), hyper) == 73856093 % 2 ** 20
    assert hash_key(BlockCoord(1, 1, 0), hyper) == (73856093 ^ 19349669) % 2 ** 20


def test_hash_key_range_with_negatives(hyper):
    """Test that negative and large coordinates hash into [0, n)."""
    rng = np.random.default_rng(0)
    for c in rng.integers(-10_000, 10_000, size=(500, 3)):
        assert 0 <= hash_key(BlockCoord(*map(int, c)), hyper) < hyper.table_size
    assert hash_key(BlockCoord(-1, 0, 0), hyper) == ((-73856093) % 2 ** 64) % 2 ** 20


def test_route_frame_agrees_with_point_to_block(hyper):
    """Test that every routed point lands in the block point_to_block names."""
    rng = np.random.default_rng(1)
    pts = rng.uniform(-2.0, 2.0, size=(2000, 3))
    pts[:50] = np.round(pts[:50] / hyper.block_extent) * hyper.block_extent
    routed = route_frame(pts, GlobalMap(hyper))
    seen = 0
    for coord, idx in routed.buckets.items():
        for i in idx:
            assert point_to_block(pts[i], hyper) == coord
        seen += len(idx)
    assert seen == len(pts)


def test_route_frame_preserves_order(hyper):
    """Test that buckets keep input order and new blocks are counted."""
    m = GlobalMap(hyper)
    pts = np.array([
        [0.1, 0.1, 0.1],
        [0.5, 0.1, 0.1],
        [0.2, 0.1, 0.1],
        [np.nan, 0.0, 0.0],
        [0.3, 0.1, 0.1],
    ])
    routed = route_frame(pts, m)
    assert routed.invalid_points == 1
    assert routed.blocks_allocated == 2
    assert routed.buckets[BlockCoord(0, 0, 0)].tolist() == [0, 2, 4]
    assert routed.buckets[BlockCoord(1, 0, 0)].tolist() == [1]

    again = route_frame(pts[:3], m)
    assert again.blocks_allocated == 0


def test_route_empty(hyper):
    """Test routing an empty frame."""
    routed = route_frame(np.zeros((0, 3)), GlobalMap(hyper))
    assert routed.buckets == {}
    assert routed.blocks_allocated == 0
