"""
Spatial Hash Table

Maps block coordinates to block processors. The spatial hash picks a
bucket; each bucket chains the processors whose coordinates collide, keyed
by the full coordinate. Allocation is exactly-once under concurrent callers
through striped bucket locks.
"""

import threading
from typing import Dict, Iterator, List, Optional, Tuple

from app.models.block import BlockCoord, BlockProcessor
from app.schemas.params import Hyperparameters
from app.services import spatial


class SpatialHashTable:
    """Chained hash table of BlockProcessors with lock-striped allocation."""

    def __init__(self, hyper: Hyperparameters, lock_stripes: int = 64):
        self.hyper = hyper
        self._buckets: Dict[int, List[BlockProcessor]] = {}
        self._locks = [threading.Lock() for _ in range(max(1, lock_stripes))]
        self._count = 0
        self._count_lock = threading.Lock()

    def __len__(self) -> int:
        return self._count

    def __contains__(self, coord) -> bool:
        return self.get(coord) is not None

    def __iter__(self) -> Iterator[BlockProcessor]:
        """Iterate processors in ascending coordinate order."""
        return iter(self.sorted_blocks())

    def sorted_blocks(self) -> List[BlockProcessor]:
        """All processors sorted by block coordinate."""
        procs = [p for bucket in list(self._buckets.values()) for p in list(bucket)]
        return sorted(procs, key=lambda p: p.coord)

    def get(self, coord) -> Optional[BlockProcessor]:
        """Look up the processor for a coordinate without allocating."""
        coord = BlockCoord(*coord)
        bucket = self._buckets.get(spatial.hash_key(coord, self.hyper))
        if bucket is None:
            return None
        for proc in list(bucket):
            if proc.coord == coord:
                return proc
        return None

    def get_or_allocate(self, coord) -> Tuple[BlockProcessor, bool]:
        """
        Return the processor for a coordinate, allocating it on first sight.

        Returns:
            (processor, allocated): allocated is True only for the single
            caller that created the processor
        """
        coord = BlockCoord(*coord)
        found = self.get(coord)
        if found is not None:
            return found, False

        key = spatial.hash_key(coord, self.hyper)
        with self._locks[key % len(self._locks)]:
            bucket = self._buckets.setdefault(key, [])
            for proc in bucket:
                if proc.coord == coord:
                    return proc, False
            proc = BlockProcessor(coord, self.hyper.truncation)
            bucket.append(proc)
        with self._count_lock:
            self._count += 1
        return proc, True

    def insert(self, proc: BlockProcessor) -> None:
        """Insert a fully built processor (used when loading a saved map)."""
        key = spatial.hash_key(proc.coord, self.hyper)
        with self._locks[key % len(self._locks)]:
            bucket = self._buckets.setdefault(key, [])
            if any(p.coord == proc.coord for p in bucket):
                raise KeyError(f"block {tuple(proc.coord)} already present")
            bucket.append(proc)
        with self._count_lock:
            self._count += 1
