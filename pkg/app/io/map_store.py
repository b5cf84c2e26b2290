"""
Map Persistence

Versioned little-endian binary format for a GlobalMap, so that `sample`
and `eval` can run without re-running inference. The layout is documented
in docs/map_format.md.
"""

import logging
from pathlib import Path
from typing import Union

import numpy as np

from app.core.exceptions import ConfigError, ExportError, MapFormatError
from app.models.block import BlockProcessor
from app.models.global_map import GlobalMap
from app.schemas.params import make_hyperparameters

logger = logging.getLogger(__name__)

MAGIC = b"DPGMMAP\x00"
VERSION = 1

_MODES = ("map", "gibbs")

HEADER_DTYPE = np.dtype([
    ("magic", "S8"),
    ("version", "<u4"),
    ("truncation", "<u4"),
    ("block_side", "<u4"),
    ("assignment_mode", "<u4"),
    ("voxel_size", "<f8"),
    ("alpha", "<f8"),
    ("base_sigma", "<f8"),
    ("prune_threshold", "<f8"),
    ("raw_point_sigma", "<f8"),
    ("prune_grace_frames", "<i8"),
    ("table_size", "<i8"),
    ("hash_primes", "<i8", (3,)),
    ("seed", "<i8"),
    ("frame_counter", "<i8"),
    ("block_count", "<i8"),
])

BLOCK_DTYPE = np.dtype([
    ("coord", "<i8", (3,)),
    ("point_count", "<i8"),
    ("size", "<i8"),
])

COMPONENT_DTYPE = np.dtype([
    ("weight", "<f8"),
    ("mean", "<f8", (3,)),
    ("scatter", "<f8", (3, 3)),
    ("prior_cov", "<f8", (3, 3)),
    ("confidence", "<f8"),
    ("birth_frame", "<i8"),
])


def serialize_map(m: GlobalMap) -> bytes:
    """Encode a map; blocks in ascending coordinate order, components in slot order."""
    h = m.hyper
    blocks = m.blocks.sorted_blocks()
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header["magic"] = MAGIC
    header["version"] = VERSION
    header["truncation"] = h.truncation
    header["block_side"] = h.block_side
    header["assignment_mode"] = _MODES.index(h.assignment_mode)
    header["voxel_size"] = h.voxel_size
    header["alpha"] = h.alpha
    header["base_sigma"] = h.base_sigma
    header["prune_threshold"] = h.prune_threshold
    header["raw_point_sigma"] = h.raw_point_sigma
    header["prune_grace_frames"] = h.prune_grace_frames
    header["table_size"] = h.table_size
    header["hash_primes"] = h.hash_primes
    header["seed"] = h.seed
    header["frame_counter"] = m.frame_counter
    header["block_count"] = len(blocks)

    parts = [header.tobytes()]
    for proc in blocks:
        rec = np.zeros(1, dtype=BLOCK_DTYPE)
        rec["coord"] = tuple(proc.coord)
        rec["point_count"] = proc.point_count
        rec["size"] = proc.size
        parts.append(rec.tobytes())
        comps = np.zeros(proc.size, dtype=COMPONENT_DTYPE)
        n = proc.size
        comps["weight"] = proc.weights[:n]
        comps["mean"] = proc.means[:n]
        comps["scatter"] = proc.scatters[:n]
        comps["prior_cov"] = proc.prior_covs[:n]
        comps["confidence"] = proc.confidence[:n]
        comps["birth_frame"] = proc.births[:n]
        parts.append(comps.tobytes())
    return b"".join(parts)


def _take(buf: bytes, offset: int, dtype: np.dtype, count: int):
    end = offset + dtype.itemsize * count
    if end > len(buf):
        raise MapFormatError(f"Map file truncated at byte {offset} (need {end}, have {len(buf)})")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset), end


def deserialize_map(buf: bytes) -> GlobalMap:
    """
    Decode bytes written by serialize_map.

    Raises:
        MapFormatError: On a bad magic, unknown version or truncated data
    """
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise MapFormatError("Not a map file (bad magic)")
    header, offset = _take(buf, 0, HEADER_DTYPE, 1)
    header = header[0]
    if int(header["version"]) != VERSION:
        raise MapFormatError(f"Unsupported map version {int(header['version'])}")
    mode = int(header["assignment_mode"])
    if mode >= len(_MODES):
        raise MapFormatError(f"Unknown assignment mode code {mode}")

    try:
        hyper = make_hyperparameters(
            alpha=float(header["alpha"]),
            base_sigma=float(header["base_sigma"]),
            truncation=int(header["truncation"]),
            prune_threshold=float(header["prune_threshold"]),
            prune_grace_frames=int(header["prune_grace_frames"]),
            voxel_size=float(header["voxel_size"]),
            block_side=int(header["block_side"]),
            hash_primes=tuple(int(p) for p in header["hash_primes"]),
            table_size=int(header["table_size"]),
            assignment_mode=_MODES[mode],
            raw_point_sigma=float(header["raw_point_sigma"]),
            seed=int(header["seed"]),
        )
    except ConfigError as e:
        raise MapFormatError(f"Map header holds invalid parameters: {e}") from e

    m = GlobalMap(hyper)
    m.frame_counter = int(header["frame_counter"])
    for _ in range(int(header["block_count"])):
        rec, offset = _take(buf, offset, BLOCK_DTYPE, 1)
        rec = rec[0]
        size = int(rec["size"])
        if not 0 <= size <= hyper.truncation:
            raise MapFormatError(f"Block holds {size} components, truncation is {hyper.truncation}")
        comps, offset = _take(buf, offset, COMPONENT_DTYPE, size)
        proc = BlockProcessor(tuple(int(c) for c in rec["coord"]), hyper.truncation)
        proc.point_count = int(rec["point_count"])
        proc.size = size
        proc.weights[:size] = comps["weight"]
        proc.means[:size] = comps["mean"]
        proc.scatters[:size] = comps["scatter"]
        proc.prior_covs[:size] = comps["prior_cov"]
        proc.confidence[:size] = comps["confidence"]
        proc.births[:size] = comps["birth_frame"]
        try:
            m.blocks.insert(proc)
        except KeyError as e:
            raise MapFormatError(f"Duplicate block in map file: {e}") from e
    if offset != len(buf):
        raise MapFormatError(f"{len(buf) - offset} trailing byte(s) after last block")
    return m


def save_map(m: GlobalMap, path: Union[str, Path]) -> Path:
    """
    Write a map to disk.

    Raises:
        ExportError: If the file cannot be written
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(serialize_map(m))
    except OSError as e:
        raise ExportError(f"Cannot write map {path}: {e}") from e
    logger.info(f"Saved map to {path} ({len(m.blocks)} blocks, {m.component_count()} components)")
    return path


def load_map(path: Union[str, Path]) -> GlobalMap:
    """
    Read a map written by save_map.

    Raises:
        MapFormatError: If the file is missing, malformed or truncated
    """
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise MapFormatError(f"Cannot read map {path}: {e}") from e
    m = deserialize_map(buf)
    logger.info(f"Loaded map {path} ({len(m.blocks)} blocks, {m.component_count()} components)")
    return m
