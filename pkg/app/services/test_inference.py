"""
Incremental Inference Testing

CRP scores and decisions, one-point parameter updates, and the frame
update loop including determinism across worker counts.
"""

import math

import numpy as np
import pytest

from app.core.exceptions import ConfigError
from app.io.map_store import serialize_map
from app.io.synthetic import gmm_batches, plane_frames
from app.models.block import BlockProcessor
from app.models.component import GaussianComponent
from app.models.global_map import GlobalMap
from app.schemas.params import make_hyperparameters
from app.services import kernels
from app.services.inference import (
    assign,
    assignment_scores,
    instantiate_component,
    process_frame,
    update_component,
)
from app.services.sensor import backproject


def _block_with(weights, means, truncation=5):
    proc = BlockProcessor((0, 0, 0), truncation)
    for w, mu in zip(weights, means):
        proc.set_component(proc.size, GaussianComponent(
            weight=float(w), mean=mu, scatter=np.eye(3) * 1e-4 * max(w - 1, 0),
            prior_cov=1e-4 * np.eye(3)))
    proc.point_count = int(sum(weights))
    return proc


# ============================================
# CRP SCORES
# ============================================

def test_prior_scores_sum_to_one():
    """Test CRP prior normalization over randomized block states."""
    rng = np.random.default_rng(42)
    for _ in range(10_000):
        k = int(rng.integers(0, 6))
        weights = rng.integers(1, 50, size=k)
        alpha = float(rng.uniform(0.01, 10.0))
        j = int(rng.integers(1, 100))
        hyper = make_hyperparameters(alpha=alpha, truncation=6)
        proc = _block_with(weights, rng.normal(size=(k, 3)), truncation=6)
        scores = assignment_scores(np.zeros(3), np.zeros((3, 3)), proc, hyper, j, use_likelihood=False)
        assert len(scores) == k + 1
        assert math.fsum(scores) == pytest.approx(1.0, abs=1e-12)


def test_alpha_split_across_blocks():
    """Test that the new-component mass uses alpha / J."""
    hyper = make_hyperparameters(alpha=1.0)
    proc = _block_with([1], [np.zeros(3)])
    scores = assignment_scores(np.zeros(3), None, proc, hyper, j=2, use_likelihood=False)
    assert scores == pytest.approx([2.0 / 3.0, 1.0 / 3.0])


def test_invalid_j_and_alpha(empty_block, hyper):
    """Test the J >= 1 precondition."""
    with pytest.raises(ConfigError):
        assignment_scores(np.zeros(3), None, empty_block, hyper, j=0)


def test_empty_block_instantiates(empty_block, hyper):
    """Test that the first point always opens a component."""
    a = assign(np.array([0.1, 0.1, 0.1]), 1e-4 * np.eye(3), empty_block, hyper, j=1)
    assert a.is_new
    assert a.posterior == pytest.approx(1.0)


def test_near_point_joins_existing(hyper):
    """Test that a point at a dense component's mean joins it."""
    proc = _block_with([200], [np.array([0.1, 0.1, 0.1])])
    a = assign(np.array([0.1, 0.1, 0.1]), 1e-6 * np.eye(3), proc, hyper, j=1)
    assert a.slot == 0


def test_truncation_forces_nearest():
    """Test that a full block never instantiates and falls back to the nearest mean."""
    h = make_hyperparameters(truncation=2)
    proc = _block_with([50, 50], [np.zeros(3), np.array([0.3, 0.0, 0.0])], truncation=2)
    far = np.array([10.0, 0.0, 0.0])
    a = assign(far, 1e-6 * np.eye(3), proc, h, j=1)
    assert a.slot == 1
    assert a.posterior == 0.0


def test_ties_go_to_lowest_index(hyper):
    """Test the lowest-index tie-break."""
    mean = np.array([0.1, 0.1, 0.1])
    proc = _block_with([30, 30], [mean, mean.copy()])
    assert assign(mean, 1e-6 * np.eye(3), proc, hyper, j=1).slot == 0


def test_sampled_assignment_follows_uniform():
    """Test sampled assignment with the uniform at both ends of [0, 1)."""
    h = make_hyperparameters(alpha=1.0)
    proc = _block_with([1], [np.zeros(3)])
    low = assign(np.zeros(3), None, proc, h, j=1, u=0.0)
    high = assign(np.zeros(3), None, proc, h, j=1, u=0.999999)
    assert low.slot == 0
    assert high.is_new


# ============================================
# PARAMETER UPDATES
# ============================================

def test_update_component_example():
    """Test one recursive update."""
    c = GaussianComponent(weight=1, mean=np.zeros(3))
    c2 = update_component(c, [2.0, 0.0, 0.0])
    assert c2.weight == 2
    assert c2.mean.tolist() == [1.0, 0.0, 0.0]
    assert c2.scatter[0, 0] == pytest.approx(2.0)
    assert c.weight == 1


def _batch_stats(pts):
    mean = pts.mean(axis=0)
    dev = pts - mean
    return mean, dev.T @ dev


def test_sequential_matches_batch():
    """Test update_component against batch count, mean and scatter."""
    rng = np.random.default_rng(7)
    for _ in range(20):
        pts = rng.uniform(-10, 10, size=(int(rng.integers(1, 300)), 3))
        c = GaussianComponent(weight=1, mean=pts[0])
        for p in pts[1:]:
            c = update_component(c, p)
        mean, scatter = _batch_stats(pts)
        assert c.weight == len(pts)
        assert np.allclose(c.mean, mean, rtol=1e-12, atol=1e-11)
        assert np.allclose(c.scatter, scatter, rtol=1e-9, atol=1e-9)


def test_welford_kernel_matches_batch():
    """Test the compiled recursion over 1000 random sequences of up to 1000 points."""
    rng = np.random.default_rng(8)
    for _ in range(1000):
        pts = rng.uniform(-10, 10, size=(int(rng.integers(1, 1001)), 3))
        weights = np.ones(1)
        means = pts[:1].copy()
        scatters = np.zeros((1, 3, 3))
        for p in pts[1:]:
            kernels.welford_update(0, p, weights, means, scatters)
        mean, scatter = _batch_stats(pts)
        assert weights[0] == len(pts)
        # absolute tolerance is relative to the coordinate range
        assert np.allclose(means[0], mean, rtol=1e-12, atol=1e-11)
        assert np.allclose(scatters[0], scatter, rtol=1e-9, atol=1e-9)


def test_instantiate_component(hyper):
    """Test seeding a component from one point."""
    p = np.array([0.1, 0.2, 0.3])
    p_cov = 1e-5 * np.eye(3)
    c = instantiate_component(p, p_cov, hyper, frame=4)
    assert c.weight == 1
    assert np.array_equal(c.mean, p)
    assert np.array_equal(c.scatter, np.zeros((3, 3)))
    assert np.allclose(c.prior_cov, hyper.base_sigma ** 2 * np.eye(3) + p_cov)
    assert c.birth_frame == 4
    assert c.confidence > 0


# ============================================
# FRAME UPDATE
# ============================================

def test_process_frame_counts(hyper):
    """Test J, allocation and the frame counter."""
    m = GlobalMap(hyper)
    pts = np.array([[0.1, 0.1, 0.1], [0.11, 0.1, 0.1], [0.9, 0.1, 0.1], [np.nan, 0, 0]])
    stats = process_frame(pts, None, m)
    assert stats.frame_index == 0
    assert stats.blocks_touched == 2
    assert stats.blocks_allocated == 2
    assert stats.invalid_points == 1
    assert stats.points_routed == 3
    assert m.frame_counter == 1
    assert m.component_count() >= 2
    assert stats.components_created - stats.components_pruned == m.component_count()

    more = process_frame(pts[:3] + 0.4, None, m)
    assert more.frame_index == 1
    assert more.points_routed == 3
    assert more.components_created - more.components_pruned == m.component_count() - stats.components_created


def test_empty_frame_leaves_map_unchanged(hyper):
    """Test that an empty frame is a no-op."""
    m = GlobalMap(hyper)
    process_frame(np.array([[0.1, 0.1, 0.1]]), None, m)
    before = serialize_map(m)
    stats = process_frame(np.zeros((0, 3)), None, m)
    assert stats.points_routed == 0
    assert serialize_map(m) == before


def test_weights_account_for_every_point():
    """Test that block weights sum to the routed point count without pruning."""
    hyper = make_hyperparameters(voxel_size=0.05, prune_threshold=0.0)
    m = GlobalMap(hyper)
    for batch in gmm_batches(5, 500, seed=1):
        process_frame(batch.points, None, m)
    for proc in m.blocks:
        assert proc.size <= hyper.truncation
        assert proc.weights[: proc.size].sum() == pytest.approx(proc.point_count)


@pytest.mark.parametrize("mode", ["map", "gibbs"])
def test_worker_count_invariance(mode, small_intrinsics):
    """Test byte-identical maps for 1, 4 and 8 workers."""
    hyper = make_hyperparameters(voxel_size=0.05, assignment_mode=mode, seed=3)
    frames = [backproject(f) for f in plane_frames(50, small_intrinsics, seed=5, outlier_fraction=0.02)]
    blobs = []
    for workers in (1, 4, 8):
        m = GlobalMap(hyper)
        for pts, covs in frames:
            process_frame(pts, covs, m, workers=workers)
        blobs.append(serialize_map(m))
    assert blobs[0] == blobs[1] == blobs[2]


def test_learned_scatter_is_psd(small_intrinsics):
    """Test that every mature component of a plane run has a PSD scatter matrix."""
    hyper = make_hyperparameters(voxel_size=0.05)
    m = GlobalMap(hyper)
    for frame in plane_frames(10, small_intrinsics, seed=2):
        pts, covs = backproject(frame)
        process_frame(pts, covs, m)
    checked = 0
    for proc in m.blocks:
        for k in range(proc.size):
            if proc.weights[k] < 2:
                continue
            s = proc.scatters[k]
            assert np.allclose(s, s.T, atol=1e-15)
            assert np.linalg.eigvalsh(s).min() >= -1e-10 * max(np.trace(s), 1e-300)
            checked += 1
    assert checked > 0
