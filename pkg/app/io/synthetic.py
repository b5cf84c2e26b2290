"""
Synthetic Scenes

Analytic scenes with known geometry for tests, benchmarks and the `synth`
command:

    plane  a 2 m x 2 m plane at z = 0 scanned by a depth camera looking down
           from 1 m to 3 m, with depth noise drawn from the sensor model and
           optional outlier pixels
    gmm    point batches drawn from a fixed five-component Gaussian mixture
"""

import logging
from pathlib import Path
from typing import Iterator, Optional, Tuple, Union

import cv2
import numpy as np
from scipy.spatial.transform import Rotation

from app.core.exceptions import ConfigError, ExportError
from app.io.mesh import Reference, write_mesh_ply
from app.io.ply import write_points
from app.models.frame import PointBatch, Pose, SensorFrame
from app.schemas.params import Intrinsics, NoiseModel
from app.schemas.run import DatasetManifest

logger = logging.getLogger(__name__)

# Camera looking straight down the world -z axis
DOWN_ROTATION = np.diag([1.0, -1.0, -1.0])

PLANE_HALF_SIZE = 1.0
OUTLIER_DEPTH_RANGE = (0.5, 4.0)
FRAME_RATE = 30.0

# Means sit at block centers for the default 5 cm voxels (0.4 m blocks)
GMM_MEANS = np.array([
    [0.2, 0.2, 0.2],
    [1.0, 0.2, 0.2],
    [0.2, 1.0, 0.2],
    [0.2, 0.2, 1.0],
    [1.0, 1.0, 1.0],
])
GMM_SIGMAS = np.array([
    [0.020, 0.020, 0.020],
    [0.030, 0.015, 0.015],
    [0.015, 0.030, 0.010],
    [0.010, 0.010, 0.030],
    [0.025, 0.020, 0.015],
])
GMM_WEIGHTS = np.array([0.1, 0.15, 0.2, 0.25, 0.3])
GMM_REFERENCE_POINTS = 20_000


# ============================================
# PLANE SCENE
# ============================================

def plane_mesh(half_size: float = PLANE_HALF_SIZE) -> Tuple[np.ndarray, np.ndarray]:
    """Vertices and triangles of the square z = 0, |x|, |y| <= half_size."""
    h = half_size
    vertices = np.array([[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]])
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    return vertices, faces


def plane_depth(intr: Intrinsics, pose: Pose, half_size: float = PLANE_HALF_SIZE) -> np.ndarray:
    """
    Noise-free depth image of the plane seen from `pose`.

    Pixels whose ray misses the square get depth 0.
    """
    vs, us = np.mgrid[0:intr.height, 0:intr.width].astype(np.float64)
    rays = np.stack([(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy, np.ones_like(us)], axis=-1)
    world = rays @ pose.rotation.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -pose.translation[2] / world[..., 2]
    hit = pose.translation + t[..., None] * world
    valid = (t > 0) & (np.abs(hit[..., 0]) <= half_size) & (np.abs(hit[..., 1]) <= half_size)
    return np.where(valid, t, 0.0)


def plane_pose(i: int, frames: int, rng: np.random.Generator, jitter: float = 0.05) -> Pose:
    """Camera pose for frame i: height sweeps 1 m to 3 m, small random tilt and offset."""
    height = 1.0 + 2.0 * i / (frames - 1) if frames > 1 else 2.0
    tilt = Rotation.from_rotvec(rng.normal(0.0, jitter, 3)).as_matrix()
    offset = rng.uniform(-0.2, 0.2, 2)
    return Pose(DOWN_ROTATION @ tilt, [offset[0], offset[1], height])


def plane_frames(frames: int, intr: Intrinsics, noise: Optional[NoiseModel] = None,
                 seed: int = 0, outlier_fraction: float = 0.0, noisy: bool = True,
                 jitter: float = 0.05) -> Iterator[SensorFrame]:
    """
    Depth frames of the plane scene.

    Args:
        frames: Number of frames
        intr: Camera intrinsics
        noise: Depth noise model (defaults to the Kinect curve)
        seed: Generator seed
        outlier_fraction: Share of pixels replaced by uniform depths in 0.5-4 m
        noisy: Add depth noise drawn from the noise model
        jitter: Std of the random camera tilt (rad)

    Yields:
        SensorFrame: One frame per time step
    """
    if not 0.0 <= outlier_fraction <= 1.0:
        raise ConfigError(f"outlier_fraction must be in [0, 1], got {outlier_fraction}")
    noise = noise or NoiseModel()
    rng = np.random.default_rng(seed)
    for i in range(frames):
        pose = plane_pose(i, frames, rng, jitter)
        depth = plane_depth(intr, pose)
        valid = depth > 0
        if noisy and np.any(valid):
            z = depth[valid]
            depth[valid] = np.maximum(z + rng.normal(0.0, 1.0, z.shape) * noise.depth_sigma(z), 1e-3)
        if outlier_fraction > 0:
            n_out = int(round(outlier_fraction * depth.size))
            pix = rng.choice(depth.size, size=n_out, replace=False)
            depth.reshape(-1)[pix] = rng.uniform(*OUTLIER_DEPTH_RANGE, size=n_out)
        yield SensorFrame(depth, intr, pose, timestamp=i / FRAME_RATE)


# ============================================
# GMM SCENE
# ============================================

def draw_gmm(count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Draw points from the fixed mixture; returns (points, component labels)."""
    labels = rng.choice(len(GMM_WEIGHTS), size=count, p=GMM_WEIGHTS)
    points = GMM_MEANS[labels] + rng.standard_normal((count, 3)) * GMM_SIGMAS[labels]
    return points, labels


def gmm_batches(frames: int, points_per_frame: int, seed: int = 0,
                outlier_fraction: float = 0.0) -> Iterator[PointBatch]:
    """
    Point batches drawn from the fixed mixture.

    Outliers are uniform in the box [-0.8, 2.0]^3 around the mixture.
    """
    rng = np.random.default_rng(seed)
    for i in range(frames):
        points, _ = draw_gmm(points_per_frame, rng)
        n_out = int(round(outlier_fraction * points_per_frame))
        if n_out:
            idx = rng.choice(points_per_frame, size=n_out, replace=False)
            points[idx] = rng.uniform(-0.8, 2.0, size=(n_out, 3))
        yield PointBatch(points, timestamp=i / FRAME_RATE)


# ============================================
# GROUND TRUTH
# ============================================

def scene_reference(scene: str, seed: int = 0) -> Reference:
    """
    Ground truth of a synthetic scene for evaluation.

    The plane scene gives its two-triangle mesh, the gmm scene a cloud of
    fresh mixture draws (seeded by seed + 1, independent of the batches).

    Raises:
        ConfigError: If the scene is unknown
    """
    if scene == "plane":
        vertices, faces = plane_mesh()
        return Reference(triangles=vertices[faces])
    if scene == "gmm":
        points, _ = draw_gmm(GMM_REFERENCE_POINTS, np.random.default_rng(seed + 1))
        return Reference(points=points)
    raise ConfigError(f"Unknown synthetic scene '{scene}'")


# ============================================
# DATASET WRITER
# ============================================

def _write_tum_line(pose: Pose, timestamp: float) -> str:
    qx, qy, qz, qw = Rotation.from_matrix(pose.rotation).as_quat()
    tx, ty, tz = pose.translation
    return f"{timestamp:.6f} {tx:.9f} {ty:.9f} {tz:.9f} {qx:.9f} {qy:.9f} {qz:.9f} {qw:.9f}\n"


def write_synthetic_dataset(out_dir: Union[str, Path], scene: str = "plane", frames: int = 100,
                            intr: Optional[Intrinsics] = None, noise: Optional[NoiseModel] = None,
                            depth_scale: float = 1.0 / 5000.0, seed: int = 0,
                            outlier_fraction: float = 0.0,
                            points_per_frame: int = 2000) -> DatasetManifest:
    """
    Write a synthetic scene to disk as a loadable dataset.

    The plane scene becomes a depth dataset: depth/NNNNNN.png (16-bit),
    depth.txt, groundtruth.txt (timestamp tx ty tz qx qy qz qw) and the
    reference mesh reference.ply. The gmm scene becomes a PLY sequence
    clouds/NNNNNN.ply with a reference cloud of fresh draws. Both get a
    manifest.json.

    Raises:
        ExportError: If any file cannot be written
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ExportError(f"Cannot create {out}: {e}") from e

    if scene == "plane":
        if intr is None:
            raise ConfigError("The plane scene needs camera intrinsics")
        (out / "depth").mkdir(exist_ok=True)
        depth_lines = ["# timestamp filename\n"]
        traj_lines = ["# timestamp tx ty tz qx qy qz qw\n"]
        for i, frame in enumerate(plane_frames(frames, intr, noise, seed, outlier_fraction)):
            name = f"depth/{i:06d}.png"
            raw = np.clip(np.round(frame.depth / depth_scale), 0, 65535).astype(np.uint16)
            if not cv2.imwrite(str(out / name), raw):
                raise ExportError(f"Cannot write {out / name}")
            depth_lines.append(f"{frame.timestamp:.6f} {name}\n")
            traj_lines.append(_write_tum_line(frame.pose, frame.timestamp))
        (out / "depth.txt").write_text("".join(depth_lines))
        (out / "groundtruth.txt").write_text("".join(traj_lines))
        write_mesh_ply(*plane_mesh(), out / "reference.ply")
        manifest = DatasetManifest(scene="plane", dataset_format="depth", frames=frames,
                                   intrinsics=intr, depth_scale=depth_scale,
                                   reference="reference.ply", seed=seed)
    elif scene == "gmm":
        for i, batch in enumerate(gmm_batches(frames, points_per_frame, seed, outlier_fraction)):
            write_points(batch.points, None, out / "clouds" / f"{i:06d}.ply")
        write_points(scene_reference("gmm", seed).points, None, out / "reference.ply")
        manifest = DatasetManifest(scene="gmm", dataset_format="ply", frames=frames,
                                   reference="reference.ply", seed=seed)
    else:
        raise ConfigError(f"Unknown synthetic scene '{scene}'")

    (out / "manifest.json").write_text(manifest.model_dump_json(indent=2))
    logger.info(f"Wrote synthetic '{scene}' dataset with {frames} frames to {out}")
    return manifest
