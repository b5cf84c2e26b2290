"""
Probability Field Service

Queries on the learned mixture: density, occupancy, per-point confidence
and ancestral sampling. All queries read a snapshot of the map and never
modify it.
"""

import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np

from app.core.exceptions import ConfigError, EmptyMap, SingularComponent
from app.models.global_map import ComponentId, ComponentTable, GlobalMap

logger = logging.getLogger(__name__)

LOG_2PI_3 = 3.0 * math.log(2.0 * math.pi)

# Squared Mahalanobis radius of the confidence gate (6 sigma)
GATE_MAHALANOBIS2 = 36.0

_CHUNK_ELEMENTS = 1 << 20


@dataclass
class SampleSet:
    """
    Points drawn from the mixture.

    Attributes:
        points: (count, 3) samples
        sources: (count,) index into `ids` of the component each point came from
        ids: Component ids of the sampled map, in id order
    """
    points: np.ndarray
    sources: np.ndarray
    ids: List[ComponentId]

    def __len__(self) -> int:
        return self.points.shape[0]

    def source_ids(self) -> List[ComponentId]:
        """Component id of every sample."""
        return [self.ids[i] for i in self.sources]


# ============================================
# MIXTURE EVALUATION
# ============================================

def _table(m: GlobalMap) -> ComponentTable:
    table = m.component_table()
    if len(table) == 0 or not table.weights.sum() > 0.0:
        raise EmptyMap("Map has no component with positive weight")
    return table


def _gaussian_terms(table: ComponentTable):
    """Inverse covariances and log normalization constants per component."""
    sign, logdet = np.linalg.slogdet(table.covariances)
    if np.any(sign <= 0):
        bad = table.ids[int(np.flatnonzero(sign <= 0)[0])]
        raise SingularComponent(f"Covariance of component {bad} is not positive definite")
    inv = np.linalg.inv(table.covariances)
    log_norm = -0.5 * (LOG_2PI_3 + logdet)
    return inv, log_norm


def _mahalanobis2(points: np.ndarray, means: np.ndarray, inv: np.ndarray) -> np.ndarray:
    d = points[:, None, :] - means[None, :, :]
    return np.maximum(np.einsum("nki,kij,nkj->nk", d, inv, d), 0.0)


def _chunks(n: int, k: int):
    step = max(1, _CHUNK_ELEMENTS // max(k, 1))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def _as_points(p):
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    return pts.reshape(-1, 3), single


def density(m: GlobalMap, p):
    """
    Mixture density sum_k w_k N(p; mu_k, cov_k) with normalized weights.

    Evaluated exactly over every component. Immature components contribute
    through their recorded prior covariance.

    Args:
        m: Map with at least one component
        p: (3,) point or (N, 3) points

    Returns:
        float for a single point, (N,) array otherwise

    Raises:
        EmptyMap: If the map has no component
    """
    table = _table(m)
    inv, log_norm = _gaussian_terms(table)
    w = table.normalized
    pts, single = _as_points(p)
    out = np.empty(pts.shape[0])
    for sl in _chunks(pts.shape[0], len(table)):
        maha = _mahalanobis2(pts[sl], table.means, inv)
        out[sl] = np.exp(log_norm[None, :] - 0.5 * maha) @ w
    return float(out[0]) if single else out


def occupancy(m: GlobalMap, p):
    """
    Occupancy probability 1 - exp(-density / rho0), rho0 = 1 / voxel_size^3.

    Example:
        density == rho0 -> 1 - e^-1 ~ 0.6321
    """
    dens = density(m, p)
    occ = -np.expm1(-np.asarray(dens) / m.hyper.reference_density)
    return float(occ) if isinstance(dens, float) else occ


def confidence_at(m: GlobalMap, p) -> float:
    """
    Confidence of the component most responsible for p.

    Only components within 6 sigma (Mahalanobis) of p are considered; ties
    in responsibility go to the larger confidence, then the lowest id.

    Returns:
        float: 0.0 for an empty map or when nothing lies within the gate
    """
    table = m.component_table()
    if len(table) == 0:
        return 0.0
    inv, log_norm = _gaussian_terms(table)
    pts, _ = _as_points(p)
    maha = _mahalanobis2(pts[:1], table.means, inv)[0]
    gated = maha <= GATE_MAHALANOBIS2
    if not np.any(gated):
        return 0.0
    resp = np.where(gated, table.weights * np.exp(log_norm - 0.5 * maha), -1.0)
    best = resp.max()
    tied = gated & (resp >= best * (1.0 - 1e-12))
    conf = np.where(tied, table.confidence, -np.inf)
    return float(table.confidence[int(np.argmax(conf))])


# ============================================
# SAMPLING
# ============================================

def sample(m: GlobalMap, count: int, seed: int = 0) -> SampleSet:
    """
    Draw points from the mixture by ancestral sampling.

    A component is chosen with probability equal to its normalized weight,
    then a point is drawn from its Gaussian. The output depends only on the
    map and the seed.

    Args:
        m: Map with at least one component
        count: Number of points (> 0)
        seed: Generator seed

    Returns:
        SampleSet: Points with their source components

    Raises:
        EmptyMap: If the map has no component
        ConfigError: If count < 1
    """
    if count < 1:
        raise ConfigError(f"sample count must be >= 1, got {count}")
    table = _table(m)
    try:
        chol = np.linalg.cholesky(table.covariances)
    except np.linalg.LinAlgError as e:
        raise SingularComponent(f"Cannot factor component covariance: {e}") from e

    rng = np.random.default_rng(seed)
    sources = rng.choice(len(table), size=count, p=table.normalized)
    z = rng.standard_normal((count, 3))
    points = table.means[sources] + np.einsum("nij,nj->ni", chol[sources], z)
    logger.debug(f"Sampled {count} points from {len(table)} components")
    return SampleSet(points=points, sources=sources.astype(np.int64), ids=table.ids)
