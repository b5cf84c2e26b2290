"""
DP-GMM Map - Command Line Entry Point

Commands:
    build   run mapping over a dataset and write map, clouds and report
    sample  export a point cloud from a saved map
    eval    measure a saved map (or a point cloud) against a reference
    synth   write a synthetic dataset to disk
    sweep   run build for several voxel sizes (accuracy vs. memory)
"""

import functools
import logging
from pathlib import Path
from typing import Optional

import click

from app import __version__
from app.core.config import Settings, get_settings
from app.core.exceptions import ConfigError, MappingError

logger = logging.getLogger(__name__)


# ============================================
# LOGGING & ERROR HANDLING
# ============================================

def configure_logging(level: str) -> None:
    """Configure root logging once for the process."""
    logging.basicConfig(
        level=getattr(logging, level),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def log_banner(settings: Settings, command: str) -> None:
    """Log the effective settings at startup."""
    logger.info("=" * 60)
    logger.info(f"Starting {settings.APP_NAME} v{__version__} ({command})")
    logger.info(f"Voxel size: {settings.VOXEL_SIZE} m, block side: {settings.BLOCK_SIDE}")
    logger.info(f"Alpha: {settings.ALPHA}, truncation: {settings.TRUNCATION}, "
                f"assignment: {settings.ASSIGNMENT_MODE}")
    logger.info(f"Workers: {settings.WORKERS}, seed: {settings.SEED}")
    logger.info("=" * 60)


def handle_errors(func):
    """Turn MappingError into a clean CLI failure; keep the traceback at DEBUG."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except MappingError as e:
            logger.debug("Command failed", exc_info=True)
            raise click.ClickException(f"{type(e).__name__}: {e}") from e
    return wrapper


# ============================================
# SHARED OPTIONS
# ============================================

_SETTING_FLAGS = {
    "voxel_size": "VOXEL_SIZE",
    "alpha": "ALPHA",
    "truncation": "TRUNCATION",
    "prune_threshold": "PRUNE_THRESHOLD",
    "workers": "WORKERS",
    "seed": "SEED",
    "stride": "STRIDE",
    "output": "OUTPUT_DIR",
}


def model_options(func):
    """Flags shared by build and sweep that override settings."""
    options = [
        click.option("--voxel-size", type=float, default=None, help="Voxel edge length (m)"),
        click.option("--alpha", type=float, default=None, help="DP concentration"),
        click.option("--truncation", type=int, default=None, help="Max components per block"),
        click.option("--prune-threshold", type=float, default=None, help="Confidence floor"),
        click.option("--workers", type=int, default=None, help="Worker threads"),
        click.option("--seed", type=int, default=None, help="Random seed"),
        click.option("--frames", type=int, default=None, help="Frames to process"),
        click.option("--stride", type=int, default=None, help="Pixel stride"),
        click.option("--output", type=click.Path(file_okay=False, path_type=Path), default=None,
                     help="Output directory"),
        click.option("--dataset", type=click.Path(exists=True, path_type=Path), default=None,
                     help="Dataset folder or PLY file"),
        click.option("--format", "dataset_format", type=click.Choice(["depth", "ply", "synthetic"]),
                     default=None, help="Dataset format"),
        click.option("--scene", type=click.Choice(["plane", "gmm"]), default=None,
                     help="Synthetic scene"),
        click.option("--reference", type=click.Path(exists=True, dir_okay=False, path_type=Path),
                     default=None, help="Reference mesh or cloud for evaluation"),
        click.option("--outliers", type=float, default=None, help="Synthetic outlier fraction"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def apply_overrides(settings: Settings, **flags) -> Settings:
    """
    Copy settings with CLI flags applied (None means "not given").

    Raises:
        ConfigError: If an override is invalid
    """
    update = {_SETTING_FLAGS[k]: v for k, v in flags.items() if k in _SETTING_FLAGS and v is not None}
    frames = flags.get("frames")
    if frames is not None:
        update["SYNTHETIC_FRAMES"] = frames
        update["MAX_FRAMES"] = frames
    extra = {"dataset": "DATASET_PATH", "dataset_format": "DATASET_FORMAT", "scene": "SCENE",
             "reference": "REFERENCE_PATH", "outliers": "OUTLIER_FRACTION"}
    update.update({extra[k]: v for k, v in flags.items() if k in extra and v is not None})
    if flags.get("dataset") is not None and flags.get("dataset_format") is None \
            and settings.DATASET_FORMAT == "synthetic":
        from app.io.datasets import detect_format

        update["DATASET_FORMAT"] = detect_format(flags["dataset"])
    try:
        return Settings.model_validate({**settings.model_dump(), **update})
    except ValueError as e:
        raise ConfigError(f"Invalid option: {e}") from e


# ============================================
# COMMANDS
# ============================================

@click.group()
@click.version_option(__version__)
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Key-value config file (.env format)")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"]), default=None)
@click.pass_context
def cli(ctx: click.Context, config_file: Optional[str], log_level: Optional[str]):
    """Streaming Dirichlet-process Gaussian-mixture mapping."""
    settings = get_settings(config_file)
    configure_logging(log_level or settings.LOG_LEVEL)
    ctx.obj = settings


@cli.command()
@model_options
@click.pass_obj
@handle_errors
def build(settings: Settings, **flags):
    """Map a dataset and write map, clouds, report and timings."""
    from app.services.pipeline import run

    settings = apply_overrides(settings, **flags)
    log_banner(settings, "build")
    report = run(settings.get_run_config())
    for key, value in report.to_key_values().items():
        click.echo(f"{key} = {value}")


@cli.command()
@click.argument("map_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--count", type=int, default=None, help="Points to sample")
@click.option("--mode", type=click.Choice(["samples", "means"]), default="samples")
@click.option("--downsample", type=float, default=None, help="Voxel size for thinning means")
@click.option("--seed", type=int, default=None)
@click.option("--output", type=click.Path(dir_okay=False, path_type=Path), default=Path("samples.ply"))
@click.pass_obj
@handle_errors
def sample(settings: Settings, map_file: Path, count: Optional[int], mode: str,
           downsample: Optional[float], seed: Optional[int], output: Path):
    """Export a point cloud from a saved map."""
    from app.io.map_store import load_map
    from app.io.ply import export_ply

    m = load_map(map_file)
    path = export_ply(m, count or settings.SAMPLE_COUNT, output, mode=mode,
                      seed=settings.SEED if seed is None else seed, downsample=downsample)
    click.echo(str(path))


@cli.command("eval")
@click.argument("source", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("reference", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--count", type=int, default=None, help="Points to sample from a map")
@click.option("--seed", type=int, default=None)
@click.pass_obj
@handle_errors
def evaluate(settings: Settings, source: Path, reference: Path, count: Optional[int], seed: Optional[int]):
    """Cloud-to-reference distance of a saved map or a PLY cloud."""
    from app.io.map_store import load_map
    from app.io.mesh import load_reference
    from app.io.ply import import_ply
    from app.services.evaluation import cloud_distance
    from app.services.pipeline import evaluate_map

    if source.suffix.lower() == ".ply":
        mean, std = cloud_distance(import_ply(source), load_reference(reference))
    else:
        mean, std = evaluate_map(load_map(source), reference, count or settings.SAMPLE_COUNT,
                                 settings.SEED if seed is None else seed)
    click.echo(f"mean_distance_cm = {mean!r}")
    click.echo(f"std_distance_cm = {std!r}")


@cli.command()
@click.argument("output", type=click.Path(file_okay=False, path_type=Path))
@click.option("--scene", type=click.Choice(["plane", "gmm"]), default=None)
@click.option("--frames", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--outliers", type=float, default=None, help="Outlier fraction")
@click.option("--points-per-frame", type=int, default=2000, help="Points per gmm batch")
@click.pass_obj
@handle_errors
def synth(settings: Settings, output: Path, scene: Optional[str], frames: Optional[int],
          seed: Optional[int], outliers: Optional[float], points_per_frame: int):
    """Write a synthetic dataset (depth PNGs or PLY clouds plus reference)."""
    from app.io.synthetic import write_synthetic_dataset

    manifest = write_synthetic_dataset(
        output,
        scene=scene or settings.SCENE,
        frames=settings.SYNTHETIC_FRAMES if frames is None else frames,
        intr=settings.get_intrinsics(),
        noise=settings.get_noise_model(),
        depth_scale=settings.DEPTH_SCALE,
        seed=settings.SEED if seed is None else seed,
        outlier_fraction=settings.OUTLIER_FRACTION if outliers is None else outliers,
        points_per_frame=points_per_frame,
    )
    click.echo(f"{manifest.frames} frames ({manifest.scene}) -> {output}")


@cli.command()
@model_options
@click.option("--voxel-sizes", default="0.02,0.05,0.1", show_default=True,
              help="Comma-separated voxel sizes (m)")
@click.pass_obj
@handle_errors
def sweep(settings: Settings, voxel_sizes: str, **flags):
    """Run build for several voxel sizes and write sweep.csv."""
    from app.services.pipeline import sweep as run_sweep

    try:
        sizes = [float(v) for v in voxel_sizes.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"Bad --voxel-sizes '{voxel_sizes}': {e}") from e
    settings = apply_overrides(settings, **flags)
    log_banner(settings, "sweep")
    config = settings.get_run_config()
    overrides = {
        "alpha": settings.ALPHA,
        "base_sigma": settings.BASE_SIGMA,
        "truncation": settings.TRUNCATION,
        "prune_threshold": settings.PRUNE_THRESHOLD,
        "prune_grace_frames": settings.PRUNE_GRACE_FRAMES,
        "block_side": settings.BLOCK_SIDE,
        "hash_primes": settings.HASH_PRIMES,
        "table_size": settings.TABLE_SIZE,
        "assignment_mode": settings.ASSIGNMENT_MODE,
        "raw_point_sigma": settings.RAW_POINT_SIGMA,
        "seed": settings.SEED,
    }
    click.echo(str(run_sweep(config, sizes, overrides)))


if __name__ == "__main__":
    cli()
