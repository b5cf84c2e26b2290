"""
Global Map Model

The measured probability field G^t: a spatial hash table of local block
mixtures plus the frame counter t.
"""

import math
from dataclasses import dataclass
from typing import Iterator, List, NamedTuple, Tuple

import numpy as np

from app.core.exceptions import EmptyMap
from app.models.block import BlockCoord, BlockProcessor
from app.models.hash_table import SpatialHashTable
from app.schemas.params import Hyperparameters


class ComponentId(NamedTuple):
    """Identifies a component by its block and slot."""
    block: BlockCoord
    slot: int


@dataclass
class ComponentTable:
    """
    Flattened snapshot of every component in a map, in id order.

    Attributes:
        ids: Component ids
        weights: (K,) raw weights omega
        means: (K, 3)
        covariances: (K, 3, 3) regularized density covariances
        confidence: (K,)
    """
    ids: List[ComponentId]
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    confidence: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def normalized(self) -> np.ndarray:
        """Weights divided by their sum."""
        return self.weights / math.fsum(self.weights.tolist())


class GlobalMap:
    """
    Block-partitioned Dirichlet-process mixture.

    Concurrent reads are safe. During a frame each block is mutated only by
    the worker that owns it; allocation goes through the table's locks.
    """

    def __init__(self, hyper: Hyperparameters, lock_stripes: int = 64):
        self.hyper = hyper
        self.blocks = SpatialHashTable(hyper, lock_stripes=lock_stripes)
        self.frame_counter = 0

    def __repr__(self) -> str:
        return (f"GlobalMap(blocks={len(self.blocks)}, components={self.component_count()}, "
                f"t={self.frame_counter})")

    def component_count(self) -> int:
        """Total components across all blocks."""
        return sum(proc.size for proc in self.blocks.sorted_blocks())

    def iter_components(self) -> Iterator[Tuple[ComponentId, BlockProcessor, int]]:
        """Yield (id, processor, slot) for every live component in id order."""
        for proc in self.blocks.sorted_blocks():
            for k in range(proc.size):
                yield ComponentId(proc.coord, k), proc, k

    def component_table(self) -> ComponentTable:
        """
        Stack every component into arrays for vectorized queries.

        Mature components use scatter/(omega-1) + eps*I, immature ones their
        recorded prior covariance.
        """
        procs = [p for p in self.blocks.sorted_blocks() if p.size > 0]
        ids = [ComponentId(p.coord, k) for p in procs for k in range(p.size)]
        if not ids:
            return ComponentTable([], np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros(0))

        weights = np.concatenate([p.weights[: p.size] for p in procs])
        means = np.concatenate([p.means[: p.size] for p in procs])
        scatters = np.concatenate([p.scatters[: p.size] for p in procs])
        priors = np.concatenate([p.prior_covs[: p.size] for p in procs])
        confidence = np.concatenate([p.confidence[: p.size] for p in procs])

        mature = weights >= 2.0
        covs = priors.copy()
        denom = np.where(mature, weights - 1.0, 1.0)[:, None, None]
        covs[mature] = (scatters / denom)[mature] + self.hyper.regularization * np.eye(3)
        return ComponentTable(ids, weights.copy(), means.copy(), covs, confidence.copy())


def normalized_weights(m: GlobalMap) -> List[Tuple[ComponentId, float]]:
    """
    Mixture weights omega_k / sum_j omega_j over all components of the map.

    Args:
        m: Map with at least one positive-weight component

    Returns:
        List of (component id, weight) pairs summing to 1

    Raises:
        EmptyMap: If the map has no component with positive weight

    Example:
        weights {1, 3} -> [0.25, 0.75]
    """
    entries = [(cid, float(proc.weights[k])) for cid, proc, k in m.iter_components()]
    total = math.fsum(w for _, w in entries)
    if not entries or total <= 0.0:
        raise EmptyMap("Map has no component with positive weight")
    return [(cid, w / total) for cid, w in entries]
