"""
Confidence & Pruning Service

Every component carries an accumulated confidence: the sum of the fidelity
weights of the points it absorbed. Components whose confidence stays below
the threshold once their grace period is over are removed from their block.
"""

import logging
from dataclasses import replace
from typing import Dict, Optional

import numpy as np

from app.core.exceptions import ConfigError
from app.models.block import BlockProcessor
from app.models.component import GaussianComponent, predictive_density
from app.schemas.params import Hyperparameters

logger = logging.getLogger(__name__)


def fidelity_weight(p, p_cov, c: GaussianComponent, hyper: Optional[Hyperparameters] = None) -> float:
    """
    Confidence contributed by one observation.

    The predictive likelihood of p under c (point-Gaussian distance) times the
    noise discount exp(-trace(p_cov) / voxel_size^2) (data fidelity).

    Args:
        p: (3,) observed point
        p_cov: (3, 3) measurement covariance
        c: Component the point was assigned to, mature or immature
        hyper: Hyperparameters (voxel size, regularization)

    Returns:
        float: Finite, nonnegative weight

    Example:
        p_cov = voxel^2 / 3 * I scales the likelihood by exp(-1) ~ 0.3679
    """
    hyper = hyper or Hyperparameters()
    p_cov = np.asarray(p_cov, dtype=np.float64).reshape(3, 3)
    discount = float(np.exp(-np.trace(p_cov) / hyper.tau2))
    return predictive_density(c, p, p_cov, hyper) * discount


def accumulate(c: GaussianComponent, w: float) -> GaussianComponent:
    """Add w >= 0 to a component's confidence, returning a new component."""
    if w < 0:
        raise ConfigError(f"fidelity weight must be >= 0, got {w}")
    return replace(
        c,
        mean=c.mean.copy(),
        scatter=c.scatter.copy(),
        prior_cov=None if c.prior_cov is None else c.prior_cov.copy(),
        confidence=c.confidence + float(w),
    )


def prune(proc: BlockProcessor, hyper: Hyperparameters, frame: Optional[int] = None) -> int:
    """
    Remove components whose confidence is below the threshold.

    A component is only eligible once `prune_grace_frames` frames have passed
    since its instantiation. Survivors keep their parameters and relative
    order; points already absorbed by a removed component are not reassigned.

    Args:
        proc: Block processor, modified in place
        hyper: Hyperparameters (prune_threshold, prune_grace_frames)
        frame: Current frame index; None ignores the grace period

    Returns:
        int: Number of components removed
    """
    if proc.size == 0 or hyper.prune_threshold <= 0.0:
        return 0
    conf = proc.confidence[: proc.size]
    doomed = conf < hyper.prune_threshold
    if frame is not None:
        doomed &= (frame - proc.births[: proc.size]) >= hyper.prune_grace_frames
    if not np.any(doomed):
        return 0
    removed = proc.keep(~doomed)
    logger.debug(f"Pruned {removed} component(s) from block {tuple(proc.coord)}")
    return removed


def relative_confidence(m) -> Dict:
    """
    Confidence of every component divided by the map maximum, in [0, 1].

    Args:
        m: GlobalMap (read only)

    Returns:
        Mapping of ComponentId to relative confidence; all zeros when no
        component has positive confidence
    """
    table = m.component_table()
    if len(table) == 0:
        return {}
    top = float(table.confidence.max())
    scaled = table.confidence / top if top > 0.0 else np.zeros(len(table))
    return {cid: float(v) for cid, v in zip(table.ids, scaled)}
