"""
Mapping Pipeline Service

End-to-end runs: stream a dataset through the frame update, save and export
the map, evaluate against a reference and write the run report.

Artifacts written to the output directory:
    map.dpgmm     saved map (docs/map_format.md)
    samples.ply   points sampled from the map, colored by confidence
    means.ply     component means, colored by confidence
    report.txt    key = value run summary
    timings.csv   one row of FrameStats per frame
"""

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np

from app.core.exceptions import DatasetError
from app.io.datasets import Frame, load_dataset, read_manifest
from app.io.map_store import save_map
from app.io.mesh import Reference, load_reference
from app.io.ply import export_ply
from app.io.synthetic import scene_reference
from app.models.frame import SensorFrame
from app.models.global_map import GlobalMap
from app.schemas.params import NoiseModel, make_hyperparameters
from app.schemas.reports import EvalReport, FrameStats
from app.schemas.run import RunConfig
from app.services import field
from app.services.evaluation import cloud_distance
from app.services.inference import process_frame
from app.services.sensor import backproject

logger = logging.getLogger(__name__)

# weight, mean (3), covariance upper triangle (6), confidence
PARAMS_PER_COMPONENT = 1 + 3 + 6 + 1
# coordinate (3 x int64), point count, slot pointer
TABLE_ENTRY_BYTES = 40

MAP_FILE = "map.dpgmm"
SAMPLES_FILE = "samples.ply"
MEANS_FILE = "means.ply"
REPORT_FILE = "report.txt"
TIMINGS_FILE = "timings.csv"
SWEEP_FILE = "sweep.csv"

T = TypeVar("T")
_END = object()


# ============================================
# ACCOUNTING
# ============================================

def parameter_bytes(m: GlobalMap) -> int:
    """Bytes of component parameters: components x 11 float64 values."""
    return m.component_count() * PARAMS_PER_COMPONENT * 8


def table_bytes(m: GlobalMap) -> int:
    """Bytes of hash-table entries, one per allocated block."""
    return len(m.blocks) * TABLE_ENTRY_BYTES


# ============================================
# FRAME STREAM
# ============================================

def prefetch(items: Iterable[T]) -> Iterator[T]:
    """Load the next item on a background thread while the current one is processed."""
    it = iter(items)
    with ThreadPoolExecutor(max_workers=1, thread_name_prefix="prefetch") as pool:
        pending = pool.submit(next, it, _END)
        while True:
            item = pending.result()
            if item is _END:
                return
            pending = pool.submit(next, it, _END)
            yield item


def integrate_frame(frame: Frame, m: GlobalMap, noise: Optional[NoiseModel] = None,
                    stride: int = 1, executor=None, workers: int = 1) -> FrameStats:
    """Back-project a depth frame (or take a point batch as is) and integrate it."""
    if isinstance(frame, SensorFrame):
        points, covs = backproject(frame, noise, stride=stride)
    else:
        points, covs = frame.points, frame.covariances
    return process_frame(points, covs, m, workers=workers, executor=executor)


def build_map(config: RunConfig, frames: Optional[Iterable[Frame]] = None,
              stats_out: Optional[List[FrameStats]] = None) -> GlobalMap:
    """
    Stream the configured dataset into a fresh map.

    Args:
        config: Run configuration
        frames: Frames to use instead of loading the dataset
        stats_out: List that receives the FrameStats of every frame, also
            when the run fails part way

    Returns:
        GlobalMap: The learned map

    Raises:
        DatasetError: If the dataset is missing or yields no frame
    """
    m = GlobalMap(config.hyper)
    stats_out = stats_out if stats_out is not None else []
    source = frames if frames is not None else load_dataset(config)
    executor = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        for frame in prefetch(source):
            stats = integrate_frame(frame, m, config.noise, config.stride, executor)
            stats_out.append(stats)
            logger.info(
                f"Frame {stats.frame_index}: {stats.points_routed} points, "
                f"{stats.blocks_touched} blocks (+{stats.blocks_allocated}), "
                f"+{stats.components_created}/-{stats.components_pruned} components, "
                f"{stats.wall_time * 1000:.1f} ms"
            )
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
    if not stats_out:
        raise DatasetError("No frames were processed")
    return m


# ============================================
# REPORTS
# ============================================

def summarize(m: Optional[GlobalMap], stats: Sequence[FrameStats], total_time: float,
              distance: Optional[Tuple[float, float]] = None, sample_count: int = 0) -> EvalReport:
    """Assemble the run report from the map and per-frame stats."""
    times = np.array([s.wall_time for s in stats]) if stats else np.zeros(0)
    p50, p90, p99 = (np.percentile(times, [50, 90, 99]) if times.size else (0.0, 0.0, 0.0))
    frame_time = float(times.sum())
    return EvalReport(
        mean_distance_cm=distance[0] if distance else None,
        std_distance_cm=distance[1] if distance else None,
        sample_count=sample_count if distance else 0,
        frames=len(stats),
        points=sum(s.points_routed for s in stats),
        component_count=m.component_count() if m is not None else 0,
        block_count=len(m.blocks) if m is not None else 0,
        parameter_bytes=parameter_bytes(m) if m is not None else 0,
        table_bytes=table_bytes(m) if m is not None else 0,
        frame_time_p50=float(p50),
        frame_time_p90=float(p90),
        frame_time_p99=float(p99),
        frames_per_second=len(stats) / frame_time if frame_time > 0 else 0.0,
        total_time=total_time,
    )


def write_report(report: EvalReport, path: Union[str, Path], include_timing: bool = True) -> Path:
    """Write the report as `key = value` lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {v}\n" for k, v in report.to_key_values(include_timing).items()]
    path.write_text("# mapping run report\n" + "".join(lines))
    return path


def read_report(path: Union[str, Path]) -> Dict[str, str]:
    """Parse a report written by write_report."""
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_timings(stats: Sequence[FrameStats], path: Union[str, Path]) -> Path:
    """Write one CSV row of FrameStats per frame."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(FrameStats.model_fields)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for s in stats:
            writer.writerow(s.model_dump())
    return path


# ============================================
# RUNS
# ============================================

def resolve_reference(config: RunConfig) -> Optional[Union[Path, Reference]]:
    """
    Reference to evaluate a run against.

    The configured reference wins; synthetic scenes fall back to their own
    ground truth and datasets on disk to the one named by their manifest.
    """
    if config.reference_path is not None:
        return Path(config.reference_path)
    if config.dataset_format == "synthetic":
        return scene_reference(config.scene, config.seed)
    if config.dataset_path is None:
        return None
    root = Path(config.dataset_path)
    root = root if root.is_dir() else root.parent
    manifest = read_manifest(root)
    if manifest is None or not manifest.reference:
        return None
    path = root / manifest.reference
    if not path.exists():
        logger.warning(f"Manifest reference {path} does not exist; skipping evaluation")
        return None
    return path


def evaluate_map(m: GlobalMap, reference: Union[str, Path, Reference], count: int,
                 seed: int = 0) -> Tuple[float, float]:
    """Sample `count` points from the map and measure them against a reference."""
    if not isinstance(reference, Reference):
        reference = load_reference(reference)
    samples = field.sample(m, count, seed=seed)
    return cloud_distance(samples.points, reference)


def run(config: RunConfig, frames: Optional[Iterable[Frame]] = None) -> EvalReport:
    """
    Run mapping end to end and write every artifact to config.output_dir.

    The report and timings are flushed even when the run fails part way;
    the error is then re-raised. Explicit `frames` are only evaluated
    against an explicitly configured reference.

    Args:
        config: Run configuration
        frames: Frames to use instead of loading the dataset

    Returns:
        EvalReport: Summary of the run

    Raises:
        DatasetError: If the dataset is missing or empty
    """
    start = time.perf_counter()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats: List[FrameStats] = []
    m: Optional[GlobalMap] = None

    logger.info("=" * 60)
    logger.info(f"Mapping run: {config.dataset_format} -> {out}")
    logger.info(f"voxel {config.hyper.voxel_size} m, alpha {config.hyper.alpha}, "
                f"T {config.hyper.truncation}, workers {config.workers}")
    logger.info("=" * 60)

    try:
        m = build_map(config, frames, stats_out=stats)
        save_map(m, out / MAP_FILE)
        export_ply(m, config.sample_count, out / SAMPLES_FILE, mode="samples", seed=config.seed)
        export_ply(m, config.sample_count, out / MEANS_FILE, mode="means")

        distance = None
        if frames is None or config.reference_path is not None:
            reference = resolve_reference(config)
        else:
            reference = None
        if reference is not None:
            distance = evaluate_map(m, reference, config.sample_count, config.seed)
        report = summarize(m, stats, time.perf_counter() - start, distance, config.sample_count)
    except Exception:
        logger.error(f"Run failed after {len(stats)} frame(s); flushing partial report")
        write_report(summarize(m, stats, time.perf_counter() - start), out / REPORT_FILE)
        write_timings(stats, out / TIMINGS_FILE)
        raise

    write_report(report, out / REPORT_FILE)
    write_timings(stats, out / TIMINGS_FILE)
    logger.info(f"Run finished: {report.frames} frames, {report.component_count} components, "
                f"{report.frames_per_second:.2f} fps")
    if report.mean_distance_cm is not None:
        logger.info(f"Accuracy: mean {report.mean_distance_cm:.4f} cm, std {report.std_distance_cm:.4f} cm")
    return report


def sweep(config: RunConfig, voxel_sizes: Sequence[float], hyper_overrides: Optional[dict] = None) -> Path:
    """
    Accuracy/memory trade-off: one run per voxel size, one CSV row each.

    Scale-dependent hyperparameters are re-derived for every voxel size
    unless given in `hyper_overrides`.

    Returns:
        Path: The sweep CSV in config.output_dir
    """
    out = Path(config.output_dir)
    rows = []
    for voxel in voxel_sizes:
        hyper = make_hyperparameters(**{**(hyper_overrides or {}), "voxel_size": voxel})
        sub = config.model_copy(update={"hyper": hyper, "output_dir": out / f"voxel_{voxel:g}"})
        report = run(sub)
        rows.append({
            "voxel_size": voxel,
            "mean_distance_cm": "" if report.mean_distance_cm is None else report.mean_distance_cm,
            "std_distance_cm": "" if report.std_distance_cm is None else report.std_distance_cm,
            "component_count": report.component_count,
            "parameter_bytes": report.parameter_bytes,
            "table_bytes": report.table_bytes,
            "mean_frame_time": (1.0 / report.frames_per_second) if report.frames_per_second else 0.0,
        })

    path = out / SWEEP_FILE
    out.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]) if rows else ["voxel_size"])
        writer.writeheader()
        writer.writerows(rows)
    logger.info(f"Wrote sweep of {len(rows)} voxel size(s) to {path}")
    return path
