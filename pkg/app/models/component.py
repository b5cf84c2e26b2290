"""
Gaussian Component Model

A single mixture component and the density math defined on it.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from app.core.exceptions import ImmatureComponent, SingularComponent
from app.schemas.params import Hyperparameters
from app.services import kernels


@dataclass
class GaussianComponent:
    """
    One mixture component theta_k.

    Attributes:
        weight: Points absorbed (omega); integral under one-point updates
        mean: (3,) mean in meters
        scatter: (3, 3) sum of outer products of deviations, not normalized
        confidence: Accumulated fidelity weight used for pruning and coloring
        prior_cov: (3, 3) base covariance used while weight < 2
        birth_frame: Frame index at instantiation
    """
    weight: float
    mean: np.ndarray
    scatter: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    confidence: float = 0.0
    prior_cov: Optional[np.ndarray] = None
    birth_frame: int = 0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.scatter = np.asarray(self.scatter, dtype=np.float64).reshape(3, 3)
        if self.prior_cov is not None:
            self.prior_cov = np.asarray(self.prior_cov, dtype=np.float64).reshape(3, 3)

    @property
    def is_mature(self) -> bool:
        """True once the sample covariance is defined (weight >= 2)."""
        return self.weight >= 2.0

    def covariance(self, hyper: Hyperparameters) -> np.ndarray:
        """
        Regularized covariance used for density evaluation.

        Mature components use scatter / (weight - 1) + eps*I; immature ones use
        the recorded prior covariance (base_sigma^2 * I when none was recorded).
        """
        if self.is_mature:
            return self.scatter / (self.weight - 1.0) + hyper.regularization * np.eye(3)
        if self.prior_cov is not None:
            return self.prior_cov.copy()
        return hyper.base_sigma ** 2 * np.eye(3)


def component_density(c: GaussianComponent, p, hyper: Optional[Hyperparameters] = None) -> float:
    """
    Evaluate the trivariate normal density of a mature component at p.

    Args:
        c: Component with weight >= 2
        p: (3,) query point in meters
        hyper: Hyperparameters providing the regularization (defaults if None)

    Returns:
        float: N(p; mean, scatter/(weight-1) + eps*I)

    Raises:
        ImmatureComponent: If weight < 2
        SingularComponent: If the regularized covariance is not positive definite

    Example:
        >>> c = GaussianComponent(weight=2, mean=[0, 0, 0], scatter=np.eye(3))
        >>> round(component_density(c, [0, 0, 0]), 6)
        0.063494
    """
    hyper = hyper or Hyperparameters()
    if not c.is_mature:
        raise ImmatureComponent(f"Component with weight {c.weight} has no sample covariance")
    return _density(c.covariance(hyper), c.mean, p)


def predictive_density(c: GaussianComponent, p, p_cov, hyper: Optional[Hyperparameters] = None) -> float:
    """
    Predictive density of an observation p with measurement covariance p_cov.

    The measurement covariance is added to the component covariance
    (mature or immature).
    """
    hyper = hyper or Hyperparameters()
    cov = c.covariance(hyper) + np.asarray(p_cov, dtype=np.float64).reshape(3, 3)
    return _density(cov, c.mean, p)


def _density(cov: np.ndarray, mean: np.ndarray, p) -> float:
    p = np.asarray(p, dtype=np.float64).reshape(3)
    d = p - mean
    value = kernels.gaussian_density(d[0], d[1], d[2], np.ascontiguousarray(cov))
    if value < 0.0:
        raise SingularComponent("Component covariance is not positive definite")
    return float(value)
