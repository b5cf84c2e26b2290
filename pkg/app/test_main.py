"""
Command Line Testing

Drives the click commands end to end on tiny synthetic datasets.
"""

import numpy as np
import pytest
from click.testing import CliRunner

from app.io.map_store import load_map
from app.io.ply import import_ply
from app.main import cli


@pytest.fixture
def config_file(tmp_path):
    """A config for a 64x48 camera with small sample counts."""
    path = tmp_path / "mapping.env"
    path.write_text(
        "DPMAP_FX=52.5\n"
        "DPMAP_FY=52.5\n"
        "DPMAP_CX=31.5\n"
        "DPMAP_CY=23.5\n"
        "DPMAP_WIDTH=64\n"
        "DPMAP_HEIGHT=48\n"
        "DPMAP_SYNTHETIC_FRAMES=3\n"
        "DPMAP_SAMPLE_COUNT=1000\n"
        "DPMAP_LOG_LEVEL=WARNING\n"
    )
    return str(path)


@pytest.fixture
def runner(monkeypatch):
    import os
    for key in list(os.environ):
        if key.startswith("DPMAP_"):
            monkeypatch.delenv(key)
    return CliRunner()


def test_build_synthetic(runner, config_file, tmp_path):
    out = tmp_path / "run"
    result = runner.invoke(cli, ["--config", config_file, "build", "--output", str(out), "--frames", "2"])
    assert result.exit_code == 0, result.output
    assert "frames = 2" in result.output
    assert load_map(out / "map.dpgmm").frame_counter == 2
    assert (out / "report.txt").exists()
    assert "mean_distance_cm = none" not in result.output
    assert "mean_distance_cm = " in result.output


def test_synth_build_sample_eval(runner, config_file, tmp_path):
    """Test the full workflow on a written gmm dataset."""
    data = tmp_path / "gmm"
    result = runner.invoke(cli, ["--config", config_file, "synth", str(data), "--scene", "gmm",
                                 "--frames", "2", "--points-per-frame", "400"])
    assert result.exit_code == 0, result.output
    assert (data / "clouds" / "000001.ply").exists()

    out = tmp_path / "run"
    result = runner.invoke(cli, ["--config", config_file, "build", "--dataset", str(data),
                                 "--output", str(out)])
    assert result.exit_code == 0, result.output
    assert "points = 800" in result.output
    assert "mean_distance_cm = none" not in result.output

    cloud = tmp_path / "cloud.ply"
    result = runner.invoke(cli, ["--config", config_file, "sample", str(out / "map.dpgmm"),
                                 "--count", "250", "--output", str(cloud)])
    assert result.exit_code == 0, result.output
    assert import_ply(cloud).shape == (250, 3)

    result = runner.invoke(cli, ["--config", config_file, "eval", str(out / "map.dpgmm"),
                                 str(data / "reference.ply"), "--count", "500"])
    assert result.exit_code == 0, result.output
    assert "mean_distance_cm = " in result.output

    result = runner.invoke(cli, ["--config", config_file, "eval", str(cloud), str(data / "reference.ply")])
    assert result.exit_code == 0, result.output
    mean = float(result.output.split("mean_distance_cm = ")[1].split()[0])
    assert np.isfinite(mean)


def test_sample_means(runner, config_file, tmp_path):
    out = tmp_path / "run"
    runner.invoke(cli, ["--config", config_file, "build", "--output", str(out), "--scene", "gmm"])
    means = tmp_path / "means.ply"
    result = runner.invoke(cli, ["--config", config_file, "sample", str(out / "map.dpgmm"),
                                 "--mode", "means", "--output", str(means)])
    assert result.exit_code == 0, result.output
    assert import_ply(means).shape[0] == load_map(out / "map.dpgmm").component_count()


def test_sweep(runner, config_file, tmp_path):
    out = tmp_path / "sweep"
    result = runner.invoke(cli, ["--config", config_file, "sweep", "--scene", "gmm", "--frames", "1",
                                 "--voxel-sizes", "0.05,0.1", "--output", str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "sweep.csv").exists()


@pytest.mark.parametrize("args", [
    ["build", "--frames", "0"],
    ["build", "--voxel-size", "-1"],
    ["sweep", "--voxel-sizes", "a,b"],
])
def test_errors_exit_cleanly(runner, config_file, tmp_path, args):
    """Test that mapping errors become a one-line failure, not a traceback."""
    result = runner.invoke(cli, ["--config", config_file, *args, "--output", str(tmp_path / "o")])
    assert result.exit_code == 1
    assert "Error:" in result.output
    assert "Traceback" not in result.output


def test_corrupt_map(runner, config_file, tmp_path):
    bad = tmp_path / "bad.dpgmm"
    bad.write_bytes(b"garbage")
    result = runner.invoke(cli, ["--config", config_file, "sample", str(bad)])
    assert result.exit_code == 1
    assert "MapFormatError" in result.output
