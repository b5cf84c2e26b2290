"""
Confidence & Pruning Testing
"""

import math

import numpy as np
import pytest

from app.core.exceptions import ConfigError
from app.models.block import BlockProcessor
from app.models.component import GaussianComponent, predictive_density
from app.models.global_map import GlobalMap
from app.schemas.params import make_hyperparameters
from app.services.inference import process_frame
from app.services.refinement import accumulate, fidelity_weight, prune, relative_confidence


def _mature(mean, confidence=0.0, birth=0):
    return GaussianComponent(weight=10, mean=mean, scatter=9e-4 * np.eye(3),
                             confidence=confidence, birth_frame=birth)


# ============================================
# FIDELITY WEIGHTS
# ============================================

def test_noise_discount(hyper):
    """Test that p_cov = voxel^2/3 * I discounts the likelihood by exp(-1)."""
    c = _mature([0.0, 0.0, 0.0])
    p_cov = hyper.voxel_size ** 2 / 3.0 * np.eye(3)
    w = fidelity_weight([0.0, 0.0, 0.0], p_cov, c, hyper)
    assert w == pytest.approx(predictive_density(c, np.zeros(3), p_cov, hyper) * math.exp(-1.0))


def test_fidelity_decreases_with_distance_and_noise(hyper):
    """Test monotonicity in point-Gaussian distance and in measurement noise."""
    c = _mature([0.0, 0.0, 0.0])
    small = 1e-6 * np.eye(3)
    near = fidelity_weight([0.0, 0.0, 0.0], small, c, hyper)
    far = fidelity_weight([0.05, 0.0, 0.0], small, c, hyper)
    noisy = fidelity_weight([0.0, 0.0, 0.0], 1e-3 * np.eye(3), c, hyper)
    assert near > far > 0.0
    assert near > noisy > 0.0


def test_fidelity_immature_component(hyper):
    """Test that immature components are weighted through their prior covariance."""
    c = GaussianComponent(weight=1, mean=np.zeros(3), prior_cov=hyper.base_sigma ** 2 * np.eye(3))
    w = fidelity_weight(np.zeros(3), np.zeros((3, 3)), c, hyper)
    assert w == pytest.approx((2 * math.pi * hyper.base_sigma ** 2) ** -1.5)


def test_accumulate():
    """Test that confidence grows without touching the input."""
    c = _mature([0.0, 0.0, 0.0], confidence=1.5)
    c2 = accumulate(c, 2.0)
    assert c2.confidence == 3.5
    assert c.confidence == 1.5
    assert c2.mean is not c.mean
    with pytest.raises(ConfigError):
        accumulate(c, -1.0)


# ============================================
# PRUNING
# ============================================

def _block(confidences, births):
    proc = BlockProcessor((0, 0, 0), truncation=8)
    for i, (conf, birth) in enumerate(zip(confidences, births)):
        proc.set_component(proc.size, _mature([0.1 * i, 0.0, 0.0], conf, birth))
    return proc


def test_prune_keeps_order():
    """Test removal below threshold with survivors kept in relative order."""
    hyper = make_hyperparameters(prune_threshold=1.0)
    proc = _block([5.0, 0.5, 2.0, 0.1], [0, 0, 0, 0])
    removed = prune(proc, hyper, frame=10)
    assert removed == 2
    assert proc.size == 2
    assert proc.confidence[:2].tolist() == [5.0, 2.0]
    assert proc.means[1, 0] == pytest.approx(0.2)
    assert proc.weights[2:].sum() == 0


def test_prune_grace_period():
    """Test that young components survive until the grace period is over."""
    hyper = make_hyperparameters(prune_threshold=1.0, prune_grace_frames=3)
    proc = _block([0.5, 0.5], [0, 8])
    assert prune(proc, hyper, frame=10) == 1
    assert proc.births[0] == 8
    # frame=None ignores the grace period
    assert prune(proc, hyper) == 1
    assert proc.size == 0


def test_prune_disabled_and_empty(empty_block):
    """Test the zero-threshold and empty-block cases."""
    assert prune(empty_block, make_hyperparameters(prune_threshold=1.0), frame=5) == 0
    proc = _block([0.0], [0])
    assert prune(proc, make_hyperparameters(prune_threshold=0.0), frame=5) == 0
    assert proc.size == 1


def test_pruning_keeps_block_point_count():
    """Test that absorbed points are not reassigned after pruning."""
    hyper = make_hyperparameters(prune_threshold=1.0)
    proc = _block([0.1, 5.0], [0, 0])
    proc.point_count = 20
    prune(proc, hyper, frame=10)
    assert proc.point_count == 20
    assert proc.size == 1


# ============================================
# RELATIVE CONFIDENCE
# ============================================

def test_relative_confidence(make_map):
    """Test scaling by the map maximum."""
    cov = 1e-4 * np.eye(3)
    m = make_map([([0.1, 0.1, 0.1], cov, 10, 2.0), ([0.2, 0.1, 0.1], cov, 10, 8.0)])
    rel = relative_confidence(m)
    assert sorted(rel.values()) == [0.25, 1.0]


def test_relative_confidence_zero(make_map, hyper):
    """Test the all-zero and empty cases."""
    m = make_map([([0.1, 0.1, 0.1], 1e-4 * np.eye(3), 10, 0.0)])
    assert list(relative_confidence(m).values()) == [0.0]
    assert relative_confidence(GlobalMap(hyper)) == {}


def test_prune_is_idempotent():
    """Test that a second prune without updates removes nothing."""
    hyper = make_hyperparameters(prune_threshold=1.0)
    proc = _block([0.2, 3.0, 0.9, 4.0, 0.1], [0, 0, 0, 0, 9])
    assert prune(proc, hyper, frame=10) == 2
    means = proc.means[: proc.size].copy()
    assert prune(proc, hyper, frame=10) == 0
    assert np.array_equal(proc.means[: proc.size], means)


def test_lone_point_is_pruned_with_defaults(hyper):
    """Test that a component seeded by one unreinforced point is pruned after the grace period."""
    m = GlobalMap(hyper)
    rng = np.random.default_rng(4)
    lone = np.array([[3.1, 3.1, 3.1]])

    def cluster():
        return rng.normal([0.2, 0.2, 0.2], 0.01, size=(200, 3))

    process_frame(np.vstack([cluster(), lone]), None, m)
    outlier = m.blocks.get((7, 7, 7))
    assert outlier.size == 1
    assert outlier.confidence[0] < hyper.prune_threshold

    pruned = 0
    for _ in range(6):
        pruned += process_frame(cluster(), None, m).components_pruned
    assert outlier.size == 0
    assert pruned >= 1
    dense = m.blocks.get((0, 0, 0))
    assert dense.size >= 1
    assert dense.confidence[: dense.size].max() > hyper.prune_threshold
