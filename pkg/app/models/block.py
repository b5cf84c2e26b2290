"""
Voxel Block Processor Model

A voxel block owns one local Dirichlet process: up to T Gaussian
components stored in preallocated arrays, plus the count of every point
ever routed to it.
"""

from typing import List, NamedTuple

import numpy as np

from app.models.component import GaussianComponent


class BlockCoord(NamedTuple):
    """Integer block indices (floor of coordinate / block extent)."""
    x: int
    y: int
    z: int


class BlockProcessor:
    """
    One local DP: a block's components plus its point count n.

    Component parameters live in fixed-size arrays (T slots) so the compiled
    integration kernel can update them in place. Only the first `size`
    slots are meaningful.
    """

    def __init__(self, coord: BlockCoord, truncation: int):
        self.coord = BlockCoord(*coord)
        self.truncation = int(truncation)
        self.size = 0
        self.point_count = 0
        t = self.truncation
        self.weights = np.zeros(t)
        self.means = np.zeros((t, 3))
        self.scatters = np.zeros((t, 3, 3))
        self.prior_covs = np.zeros((t, 3, 3))
        self.confidence = np.zeros(t)
        self.births = np.zeros(t, dtype=np.int64)

    def __repr__(self) -> str:
        return f"BlockProcessor(coord={tuple(self.coord)}, size={self.size}, n={self.point_count})"

    def __len__(self) -> int:
        return self.size

    @property
    def components(self) -> List[GaussianComponent]:
        """Snapshot of the live components, in slot order."""
        return [self.component(k) for k in range(self.size)]

    def component(self, k: int) -> GaussianComponent:
        """Copy slot k out as a GaussianComponent."""
        if not 0 <= k < self.size:
            raise IndexError(f"slot {k} out of range for block with {self.size} components")
        return GaussianComponent(
            weight=float(self.weights[k]),
            mean=self.means[k].copy(),
            scatter=self.scatters[k].copy(),
            confidence=float(self.confidence[k]),
            prior_cov=self.prior_covs[k].copy(),
            birth_frame=int(self.births[k]),
        )

    def set_component(self, k: int, c: GaussianComponent, base_var: float = 0.0) -> None:
        """Write a component into slot k (k <= size; k == size appends)."""
        if not 0 <= k <= self.size or k >= self.truncation:
            raise IndexError(f"cannot write slot {k} (size {self.size}, truncation {self.truncation})")
        self.weights[k] = c.weight
        self.means[k] = c.mean
        self.scatters[k] = c.scatter
        self.confidence[k] = c.confidence
        self.prior_covs[k] = c.prior_cov if c.prior_cov is not None else base_var * np.eye(3)
        self.births[k] = c.birth_frame
        if k == self.size:
            self.size += 1

    def keep(self, mask: np.ndarray) -> int:
        """
        Compact the live slots to those where mask is True, preserving order.

        Returns:
            int: Number of slots removed
        """
        mask = np.asarray(mask, dtype=bool)[: self.size]
        idx = np.flatnonzero(mask)
        removed = self.size - idx.size
        if removed == 0:
            return 0
        for name in ("weights", "means", "scatters", "prior_covs", "confidence", "births"):
            arr = getattr(self, name)
            arr[: idx.size] = arr[idx]
            arr[idx.size:] = 0
        self.size = int(idx.size)
        return removed
