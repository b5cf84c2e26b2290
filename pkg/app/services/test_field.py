"""
Probability Field Testing

Density, occupancy, confidence queries and sampling on small hand-built maps.
"""

import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from app.core.exceptions import ConfigError, EmptyMap
from app.models.global_map import GlobalMap
from app.services import field

COV_A = np.diag([4e-4, 1e-4, 2.5e-5])
COV_B = np.array([[2e-4, 5e-5, 0.0], [5e-5, 1e-4, 0.0], [0.0, 0.0, 1e-4]])


@pytest.fixture
def two_gaussians(make_map):
    return make_map([
        ([0.10, 0.10, 0.10], COV_A, 30, 3.0),
        ([0.50, 0.20, 0.10], COV_B, 10, 9.0),
    ])


# ============================================
# DENSITY & OCCUPANCY
# ============================================

def test_density_matches_scipy(two_gaussians):
    """Test the mixture density against scipy with 0.75 / 0.25 weights."""
    pts = np.array([[0.1, 0.1, 0.1], [0.3, 0.15, 0.1], [0.5, 0.2, 0.12], [2.0, 2.0, 2.0]])
    expected = (0.75 * multivariate_normal([0.1, 0.1, 0.1], COV_A).pdf(pts)
                + 0.25 * multivariate_normal([0.5, 0.2, 0.1], COV_B).pdf(pts))
    assert np.allclose(field.density(two_gaussians, pts), expected, rtol=1e-9, atol=0)
    assert isinstance(field.density(two_gaussians, pts[0]), float)


def test_density_integrates_to_one(make_map):
    """Test a Monte Carlo integral of the density over a 6 sigma box."""
    sigma = 0.02
    m = make_map([([0.1, 0.1, 0.1], sigma ** 2 * np.eye(3), 20)])
    rng = np.random.default_rng(3)
    lo, hi = 0.1 - 6 * sigma, 0.1 + 6 * sigma
    pts = rng.uniform(lo, hi, size=(1_000_000, 3))
    integral = field.density(m, pts).mean() * (hi - lo) ** 3
    assert integral == pytest.approx(1.0, rel=0.02)


def test_density_empty_map(hyper):
    with pytest.raises(EmptyMap):
        field.density(GlobalMap(hyper), [0.0, 0.0, 0.0])


def test_occupancy_reference_density(make_map, hyper):
    """Test that density rho0 maps to 1 - 1/e."""
    m = make_map([([0.1, 0.1, 0.1], 1e-4 * np.eye(3), 10)])
    rho0 = m.hyper.reference_density
    peak = (2 * math.pi * 1e-4) ** -1.5
    # point where the density is exactly rho0
    r = math.sqrt(2e-4 * math.log(peak / rho0))
    occ = field.occupancy(m, [0.1 + r, 0.1, 0.1])
    assert occ == pytest.approx(1.0 - math.exp(-1.0), rel=1e-9)


def test_occupancy_range(two_gaussians):
    pts = np.random.default_rng(0).uniform(-0.5, 1.0, size=(500, 3))
    occ = field.occupancy(two_gaussians, pts)
    assert np.all((occ >= 0.0) & (occ <= 1.0))


def test_occupancy_increases_with_density(two_gaussians):
    """Test that occupancy orders points the same way density does."""
    pts = np.random.default_rng(1).uniform(0.0, 0.6, size=(400, 3))
    dens = field.density(two_gaussians, pts)
    occ = field.occupancy(two_gaussians, pts)
    order = np.argsort(dens, kind="stable")
    assert np.all(np.diff(occ[order]) >= 0)


# ============================================
# CONFIDENCE QUERIES
# ============================================

def test_confidence_at_responsible_component(two_gaussians):
    assert field.confidence_at(two_gaussians, [0.1, 0.1, 0.1]) == 3.0
    assert field.confidence_at(two_gaussians, [0.5, 0.2, 0.1]) == 9.0


def test_confidence_outside_gate(two_gaussians, hyper):
    """Test the zero result far from every component and on an empty map."""
    assert field.confidence_at(two_gaussians, [5.0, 5.0, 5.0]) == 0.0
    assert field.confidence_at(GlobalMap(hyper), [0.0, 0.0, 0.0]) == 0.0


def test_confidence_tie_prefers_larger(make_map):
    """Test that equal responsibilities resolve to the larger confidence."""
    cov = 1e-4 * np.eye(3)
    m = make_map([([0.1, 0.1, 0.1], cov, 10, 1.0), ([0.1, 0.1, 0.1], cov, 10, 4.0)])
    assert field.confidence_at(m, [0.1, 0.1, 0.1]) == 4.0


# ============================================
# SAMPLING
# ============================================

def test_sample_is_reproducible(two_gaussians):
    a = field.sample(two_gaussians, 1000, seed=5)
    b = field.sample(two_gaussians, 1000, seed=5)
    c = field.sample(two_gaussians, 1000, seed=6)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)
    assert len(a) == 1000
    assert a.source_ids()[0] in a.ids


def test_sample_statistics(two_gaussians):
    """Test source frequencies and per-component moments."""
    s = field.sample(two_gaussians, 200_000, seed=1)
    share = np.mean(s.sources == 0)
    assert share == pytest.approx(0.75, abs=0.01)
    first = s.points[s.sources == 0]
    assert np.allclose(first.mean(axis=0), [0.1, 0.1, 0.1], atol=1e-3)
    assert np.allclose(np.cov(first.T), COV_A, rtol=0.05, atol=3e-6)


def test_sample_errors(two_gaussians, hyper):
    with pytest.raises(ConfigError):
        field.sample(two_gaussians, 0)
    with pytest.raises(EmptyMap):
        field.sample(GlobalMap(hyper), 10)


@pytest.mark.slow
def test_samples_follow_density(make_map):
    """Test that a sample histogram correlates with the density at bin centers."""
    cov = 4e-4 * np.eye(3)
    m = make_map([([0.1, 0.1, 0.1], cov, 10), ([0.3, 0.1, 0.1], cov, 10)])
    s = field.sample(m, 1_000_000, seed=2)
    edges = [np.linspace(0.02, 0.38, 37), np.linspace(0.02, 0.18, 17), np.linspace(0.02, 0.18, 17)]
    hist, _ = np.histogramdd(s.points, bins=edges)
    centers = np.stack(np.meshgrid(*[(e[:-1] + e[1:]) / 2 for e in edges], indexing="ij"), axis=-1)
    dens = field.density(m, centers.reshape(-1, 3))
    r = np.corrcoef(hist.ravel(), dens)[0, 1]
    assert r > 0.99
