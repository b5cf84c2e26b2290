"""
Incremental Inference Service

Per-block Chinese-restaurant-process inference and the frame-level update
loop. Each frame is routed to blocks, every touched block runs its points
through the compiled integration kernel in input order, blocks are pruned,
and the frame counter advances.

Blocks never share state during a frame, so the resulting map does not
depend on how many worker threads process them.
"""

import logging
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass
from functools import reduce
from typing import List, Optional

import numpy as np

from app.core.exceptions import ConfigError
from app.models.block import BlockCoord, BlockProcessor
from app.models.component import GaussianComponent
from app.models.global_map import GlobalMap
from app.schemas.params import Hyperparameters
from app.schemas.reports import FrameStats
from app.services import kernels
from app.services.refinement import prune
from app.services.spatial import route_frame

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Assignment:
    """
    Outcome of one CRP decision.

    Attributes:
        slot: Index of the existing component, or None for a new component
        posterior: Normalized score mass of the chosen option
    """
    slot: Optional[int]
    posterior: float

    @property
    def is_new(self) -> bool:
        return self.slot is None


def _check(hyper: Hyperparameters, j: int) -> None:
    if j < 1:
        raise ConfigError(f"J must be >= 1, got {j}")
    if not hyper.alpha > 0:
        raise ConfigError(f"alpha must be > 0, got {hyper.alpha}")


def _as_cov(p_cov) -> np.ndarray:
    if p_cov is None:
        return np.zeros((3, 3))
    return np.ascontiguousarray(p_cov, dtype=np.float64).reshape(3, 3)


# ============================================
# SINGLE-POINT OPERATIONS
# ============================================

def assignment_scores(p, p_cov, proc: BlockProcessor, hyper: Hyperparameters, j: int,
                      use_likelihood: bool = True) -> List[float]:
    """
    Unnormalized CRP scores for assigning p within a block.

    Existing component k scores omega_k / (n - 1 + alpha/J) * L(p | theta_k);
    the new option scores (alpha/J) / (n - 1 + alpha/J) * L0(p), where
    n - 1 = proc.point_count. With use_likelihood=False only the prior masses
    are returned.

    Args:
        p: (3,) point
        p_cov: (3, 3) measurement covariance
        proc: Block processor
        hyper: Hyperparameters
        j: Number of blocks touched in the current frame (J >= 1)
        use_likelihood: Multiply priors by predictive likelihoods

    Returns:
        List of length len(proc) + 1, the last entry being the new option

    Raises:
        ConfigError: If J < 1 or alpha <= 0
    """
    _check(hyper, j)
    p = np.ascontiguousarray(p, dtype=np.float64).reshape(3)
    scores = np.empty(proc.size + 1)
    kernels.crp_scores(
        p, _as_cov(p_cov), proc.weights, proc.means, proc.scatters, proc.prior_covs,
        proc.size, proc.point_count, hyper.alpha / j, hyper.base_sigma ** 2,
        hyper.regularization, use_likelihood, scores, np.empty((3, 3)),
    )
    return scores.tolist()


def assign(p, p_cov, proc: BlockProcessor, hyper: Hyperparameters, j: int,
           u: Optional[float] = None) -> Assignment:
    """
    Choose the component for p: argmax of the CRP scores, or a draw from
    them when u (a uniform in [0, 1)) is given.

    At truncation the new option is disabled; if every existing score is
    zero the nearest mean wins (lowest index on ties).
    """
    _check(hyper, j)
    p = np.ascontiguousarray(p, dtype=np.float64).reshape(3)
    scores = np.array(assignment_scores(p, p_cov, proc, hyper, j))
    slot, posterior = kernels.choose_slot(
        p, scores, proc.size, proc.truncation, proc.means, u is not None,
        0.0 if u is None else float(u),
    )
    return Assignment(None if slot == proc.size else int(slot), float(posterior))


def update_component(c: GaussianComponent, p) -> GaussianComponent:
    """
    Absorb one point into a component.

    omega' = omega + 1
    mu'    = (omega * mu + p) / (omega + 1)
    S'     = S + omega / (omega + 1) * (p - mu)(p - mu)^T

    Returns:
        GaussianComponent: New component; the input is left untouched

    Example:
        omega=1, mu=(0,0,0), p=(2,0,0) -> omega'=2, mu'=(1,0,0), S'[0,0]=2
    """
    weights = np.array([c.weight], dtype=np.float64)
    means = c.mean.reshape(1, 3).copy()
    scatters = c.scatter.reshape(1, 3, 3).copy()
    kernels.welford_update(0, np.ascontiguousarray(p, dtype=np.float64).reshape(3), weights, means, scatters)
    return GaussianComponent(
        weight=float(weights[0]),
        mean=means[0],
        scatter=scatters[0],
        confidence=c.confidence,
        prior_cov=None if c.prior_cov is None else c.prior_cov.copy(),
        birth_frame=c.birth_frame,
    )


def instantiate_component(p, p_cov, hyper: Hyperparameters, frame: int = 0) -> GaussianComponent:
    """
    Seed a component from one point: omega=1, mu=p, scatter=0.

    The prior covariance base_sigma^2 * I + p_cov is recorded for evaluating
    the component while it is immature; confidence starts at the point's
    fidelity weight under the new component.
    """
    pc = _as_cov(p_cov)
    p = np.ascontiguousarray(p, dtype=np.float64).reshape(3)
    weights = np.zeros(1)
    means = np.zeros((1, 3))
    scatters = np.zeros((1, 3, 3))
    priors = np.zeros((1, 3, 3))
    births = np.zeros(1, dtype=np.int64)
    kernels.instantiate_slot(0, p, pc, weights, means, scatters, priors, births, hyper.base_sigma ** 2, frame)
    fid = kernels.predictive_density(p, pc, 0, weights, means, scatters, priors, hyper.regularization,
                                     np.empty((3, 3)))
    return GaussianComponent(
        weight=1.0,
        mean=means[0],
        scatter=scatters[0],
        confidence=fid * kernels.fidelity_discount(pc, hyper.tau2),
        prior_cov=priors[0],
        birth_frame=int(births[0]),
    )


# ============================================
# FRAME UPDATE
# ============================================

def _block_uniforms(hyper: Hyperparameters, frame: int, coord: BlockCoord, count: int) -> np.ndarray:
    if hyper.assignment_mode != "gibbs":
        return np.empty(0)
    offset = 1 << 32
    seq = np.random.SeedSequence([hyper.seed, frame, coord.x + offset, coord.y + offset, coord.z + offset])
    return np.random.default_rng(seq).random(count)


def integrate_points(proc: BlockProcessor, points: np.ndarray, covs: np.ndarray,
                     hyper: Hyperparameters, j: int, frame: int) -> int:
    """
    Run the block's share of a frame through sequential CRP inference.

    Returns:
        int: Components created
    """
    uniforms = _block_uniforms(hyper, frame, proc.coord, points.shape[0])
    size, count, created = kernels.integrate_block(
        np.ascontiguousarray(points), np.ascontiguousarray(covs), uniforms,
        proc.weights, proc.means, proc.scatters, proc.prior_covs, proc.confidence, proc.births,
        proc.size, proc.point_count, hyper.alpha / j, hyper.base_sigma ** 2,
        hyper.regularization, hyper.tau2, frame, True, hyper.assignment_mode == "gibbs",
    )
    proc.size = int(size)
    proc.point_count = int(count)
    return int(created)


def _process_block(args) -> FrameStats:
    proc, points, covs, hyper, j, frame = args
    stats = FrameStats(frame_index=frame)
    if points is not None:
        stats.points_routed = len(points)
        stats.components_created = integrate_points(proc, points, covs, hyper, j, frame)
    stats.components_pruned = prune(proc, hyper, frame)
    return stats


def raw_covariances(count: int, hyper: Hyperparameters) -> np.ndarray:
    """Isotropic measurement covariances for points that carry none."""
    return np.broadcast_to(hyper.raw_point_sigma ** 2 * np.eye(3), (count, 3, 3)).copy()


def process_frame(points, covariances, m: GlobalMap, workers: int = 1,
                  executor: Optional[Executor] = None) -> FrameStats:
    """
    Integrate one frame of points into the map.

    Routes points to blocks (allocating new ones), sets J to the number of
    blocks receiving points, runs per-block inference in input order,
    prunes every non-empty block and advances the frame counter. An empty
    frame leaves the map unchanged.

    Args:
        points: (N, 3) world points
        covariances: (N, 3, 3) measurement covariances, or None for raw points
        m: Map to update in place
        workers: Worker threads when no executor is given
        executor: Shared executor to reuse across frames

    Returns:
        FrameStats: Counters for this frame (bad points are counted, never fatal)
    """
    start = time.perf_counter()
    frame = m.frame_counter
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if covariances is None:
        covs = raw_covariances(pts.shape[0], m.hyper)
    else:
        covs = np.asarray(covariances, dtype=np.float64).reshape(-1, 3, 3)

    if pts.shape[0] == 0:
        return FrameStats(frame_index=frame, wall_time=time.perf_counter() - start)
    if covs.shape[0] != pts.shape[0]:
        raise ConfigError(f"{covs.shape[0]} covariances for {pts.shape[0]} points")

    own_executor = None
    if executor is None and workers > 1:
        own_executor = executor = ThreadPoolExecutor(max_workers=workers)
    try:
        routed = route_frame(pts, m, executor=executor)
        j = len(routed.buckets)
        tasks = []
        for proc in m.blocks.sorted_blocks():
            idx = routed.buckets.get(proc.coord)
            if idx is not None:
                tasks.append((proc, pts[idx], covs[idx], m.hyper, j, frame))
            elif proc.size > 0:
                # untouched blocks are only pruned
                tasks.append((proc, None, None, m.hyper, j, frame))

        if executor is None:
            results = [_process_block(t) for t in tasks]
        else:
            results = list(executor.map(_process_block, tasks))
    finally:
        if own_executor is not None:
            own_executor.shutdown(wait=True)

    m.frame_counter += 1
    routing = FrameStats(
        frame_index=frame,
        invalid_points=routed.invalid_points,
        blocks_touched=j,
        blocks_allocated=routed.blocks_allocated,
    )
    stats = reduce(FrameStats.merge, results, routing)
    stats.wall_time = time.perf_counter() - start
    logger.debug(f"Frame {frame}: {stats.points_routed} pts, J={j}, "
                 f"+{stats.components_created}/-{stats.components_pruned} components")
    return stats
