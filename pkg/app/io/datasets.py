"""
Dataset Loading

Turns a RunConfig into a stream of frames:

    depth      folder of 16-bit depth PNGs with a trajectory file (TUM layout)
    ply        folder of PLY point clouds (or a single PLY file)
    synthetic  generated plane or gmm scene

Unreadable frames are logged and skipped; a dataset with no usable frame at
all raises DatasetError.
"""

import logging
from itertools import islice
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

import cv2
import numpy as np
from pydantic import ValidationError
from scipy.spatial.transform import Rotation

from app.core.exceptions import ConfigError, DatasetError
from app.io.ply import import_ply
from app.io.synthetic import gmm_batches, plane_frames
from app.models.frame import PointBatch, Pose, SensorFrame
from app.schemas.params import Intrinsics
from app.schemas.run import DatasetManifest, RunConfig

logger = logging.getLogger(__name__)

Frame = Union[SensorFrame, PointBatch]

# Max |t_depth - t_pose| in seconds for a depth image to get a pose
ASSOCIATION_TOLERANCE = 0.02

DEPTH_LISTS = ("depth.txt",)
TRAJECTORY_FILES = ("groundtruth.txt", "trajectory.txt")
GMM_POINTS_PER_FRAME = 2000


# ============================================
# TEXT FORMATS
# ============================================

def _data_lines(path: Path) -> Iterator[List[str]]:
    with open(path, "r") as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                yield line.replace(",", " ").split()


def read_trajectory(path: Union[str, Path]) -> Tuple[np.ndarray, List[Pose]]:
    """
    Read a TUM trajectory: `timestamp tx ty tz qx qy qz qw` per line.

    Malformed lines are skipped with a warning.

    Returns:
        (timestamps (N,), poses) sorted by timestamp
    """
    stamps, poses = [], []
    for parts in _data_lines(Path(path)):
        try:
            values = [float(x) for x in parts[:8]]
            if len(values) != 8:
                raise ValueError("expected 8 values")
            rot = Rotation.from_quat(values[4:8]).as_matrix()
            poses.append(Pose(rot, values[1:4]))
            stamps.append(values[0])
        except (ValueError, ConfigError) as e:
            logger.warning(f"Skipping trajectory line {' '.join(parts)!r}: {e}")
    order = np.argsort(stamps, kind="stable")
    return np.asarray(stamps)[order], [poses[i] for i in order]


def associate(stamps: np.ndarray, query: float, tolerance: float = ASSOCIATION_TOLERANCE) -> Optional[int]:
    """Index of the timestamp nearest to `query`, or None if none is within tolerance."""
    if stamps.size == 0:
        return None
    i = int(np.searchsorted(stamps, query))
    candidates = [c for c in (i - 1, i) if 0 <= c < stamps.size]
    best = min(candidates, key=lambda c: (abs(stamps[c] - query), c))
    return best if abs(stamps[best] - query) <= tolerance else None


def read_depth_png(path: Union[str, Path], depth_scale: float) -> Optional[np.ndarray]:
    """Depth image in meters from a 16-bit PNG, or None if it cannot be read."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None or raw.ndim != 2:
        return None
    return raw.astype(np.float64) * depth_scale


def read_manifest(root: Path) -> Optional[DatasetManifest]:
    """Dataset manifest if the folder has a readable manifest.json."""
    path = root / "manifest.json"
    if not path.exists():
        return None
    try:
        return DatasetManifest.model_validate_json(path.read_text())
    except (OSError, ValueError, ValidationError) as e:
        logger.warning(f"Ignoring unreadable manifest {path}: {e}")
        return None


def detect_format(path: Union[str, Path]) -> str:
    """
    Guess the dataset format of a path.

    The manifest wins; otherwise a single .ply file or a folder of PLY clouds
    is "ply" and anything else is "depth".
    """
    path = Path(path)
    if path.is_file():
        return "ply" if path.suffix.lower() == ".ply" else "depth"
    manifest = read_manifest(path)
    if manifest is not None:
        return manifest.dataset_format
    if (path / "clouds").is_dir():
        return "ply"
    if not (path / "depth").is_dir() and any(path.glob("*.ply")) and not any(path.glob("*.png")):
        return "ply"
    return "depth"


# ============================================
# LOADERS
# ============================================

def _depth_entries(root: Path) -> List[Tuple[float, Path]]:
    for name in DEPTH_LISTS:
        listing = root / name
        if listing.exists():
            entries = []
            for parts in _data_lines(listing):
                try:
                    entries.append((float(parts[0]), root / parts[1]))
                except (ValueError, IndexError):
                    logger.warning(f"Skipping malformed line in {listing}: {' '.join(parts)!r}")
            return sorted(entries, key=lambda e: e[0])
    folder = root / "depth" if (root / "depth").is_dir() else root
    files = sorted(folder.glob("*.png"))
    return [(float(i), f) for i, f in enumerate(files)]


def _load_depth(config: RunConfig) -> Iterator[SensorFrame]:
    root = Path(config.dataset_path)
    manifest = read_manifest(root)
    intr: Optional[Intrinsics] = manifest.intrinsics if manifest and manifest.intrinsics else config.intrinsics
    if intr is None:
        raise DatasetError(f"No camera intrinsics for depth dataset {root}")
    depth_scale = manifest.depth_scale if manifest else config.depth_scale

    entries = _depth_entries(root)
    if not entries:
        raise DatasetError(f"No depth images found in {root}")

    traj_path = next((root / n for n in TRAJECTORY_FILES if (root / n).exists()), None)
    if traj_path is None:
        raise DatasetError(f"No trajectory file ({', '.join(TRAJECTORY_FILES)}) in {root}")
    stamps, poses = read_trajectory(traj_path)

    def frames() -> Iterator[SensorFrame]:
        for stamp, path in entries:
            k = associate(stamps, stamp)
            if k is None:
                logger.warning(f"No pose within {ASSOCIATION_TOLERANCE}s of {path.name}; skipping")
                continue
            depth = read_depth_png(path, depth_scale)
            if depth is None:
                logger.warning(f"Cannot read depth image {path}; skipping")
                continue
            if depth.shape != (intr.height, intr.width):
                logger.warning(f"{path.name} is {depth.shape[1]}x{depth.shape[0]}, "
                               f"expected {intr.width}x{intr.height}; skipping")
                continue
            yield SensorFrame(depth, intr, poses[k], timestamp=stamp)

    return frames()


def _load_ply(config: RunConfig) -> Iterator[PointBatch]:
    root = Path(config.dataset_path)
    if root.is_file():
        files = [root]
    else:
        folder = root / "clouds" if (root / "clouds").is_dir() else root
        files = sorted(p for p in folder.glob("*.ply") if p.name != "reference.ply")
    if not files:
        raise DatasetError(f"No PLY files found in {root}")

    def frames() -> Iterator[PointBatch]:
        for i, path in enumerate(files):
            try:
                points = import_ply(path)
            except DatasetError as e:
                logger.warning(f"{e}; skipping")
                continue
            yield PointBatch(points, timestamp=float(i))

    return frames()


def _load_synthetic(config: RunConfig) -> Iterator[Frame]:
    if config.synthetic_frames == 0:
        raise DatasetError("Synthetic dataset has 0 frames")
    if config.scene == "plane":
        if config.intrinsics is None:
            raise DatasetError("The plane scene needs camera intrinsics")
        return plane_frames(config.synthetic_frames, config.intrinsics, config.noise,
                            seed=config.seed, outlier_fraction=config.outlier_fraction)
    return gmm_batches(config.synthetic_frames, GMM_POINTS_PER_FRAME, seed=config.seed,
                       outlier_fraction=config.outlier_fraction)


def _nonempty(frames: Iterator[Frame], source: str) -> Iterator[Frame]:
    produced = False
    for frame in frames:
        produced = True
        yield frame
    if not produced:
        raise DatasetError(f"Dataset {source} produced no readable frame")


def load_dataset(config: RunConfig) -> Iterator[Frame]:
    """
    Stream the frames of the configured dataset in timestamp order.

    Listing errors (missing folder, no files, no trajectory) raise at call
    time; a dataset whose every frame is unreadable raises when the stream
    is exhausted.

    Args:
        config: Validated run configuration

    Returns:
        Iterator of SensorFrame (depth, plane) or PointBatch (ply, gmm)

    Raises:
        DatasetError: If the dataset is missing or empty
    """
    if config.dataset_format == "depth":
        frames = _load_depth(config)
    elif config.dataset_format == "ply":
        frames = _load_ply(config)
    else:
        frames = _load_synthetic(config)

    source = str(config.dataset_path) if config.dataset_path else f"synthetic:{config.scene}"
    frames = _nonempty(frames, source)
    if config.max_frames is not None:
        frames = islice(frames, config.max_frames)
    return frames
