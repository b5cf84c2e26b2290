"""
Compiled Mixture Kernels

numba kernels shared by the component math, the CRP assignment and the
per-block integration loop. Every kernel works on plain float64 arrays so a
block's state can be updated in place without holding the GIL.

Block state layout (T = truncation):
    weights     (T,)      omega, points absorbed
    means       (T, 3)    mu
    scatters    (T, 3, 3) scatter accumulator (sum of deviation outer products)
    prior_covs  (T, 3, 3) base covariance recorded at instantiation
    confidence  (T,)      accumulated fidelity weight
    births      (T,)      frame index of instantiation
"""

import math

import numpy as np
from numba import njit

LOG_2PI_3 = 3.0 * math.log(2.0 * math.pi)

# Returned by gaussian_density when the covariance is not positive definite.
SINGULAR = -1.0


# ============================================
# GAUSSIAN DENSITY
# ============================================

@njit(cache=True, nogil=True)
def gaussian_density(d0, d1, d2, cov):
    """
    Trivariate normal density of deviation (d0, d1, d2) under `cov`.

    Uses the closed-form 3x3 adjugate; returns SINGULAR when det <= 0.
    """
    a = cov[0, 0]
    b = 0.5 * (cov[0, 1] + cov[1, 0])
    c = 0.5 * (cov[0, 2] + cov[2, 0])
    e = cov[1, 1]
    f = 0.5 * (cov[1, 2] + cov[2, 1])
    i = cov[2, 2]

    adj00 = e * i - f * f
    adj01 = c * f - b * i
    adj02 = b * f - c * e
    det = a * adj00 + b * adj01 + c * adj02
    if not det > 0.0:
        return SINGULAR
    adj11 = a * i - c * c
    adj12 = b * c - a * f
    adj22 = a * e - b * b

    maha = (adj00 * d0 * d0 + adj11 * d1 * d1 + adj22 * d2 * d2
            + 2.0 * (adj01 * d0 * d1 + adj02 * d0 * d2 + adj12 * d1 * d2)) / det
    if maha < 0.0:
        maha = 0.0
    return math.exp(-0.5 * (maha + LOG_2PI_3 + math.log(det)))


@njit(cache=True, nogil=True)
def component_covariance(k, weights, scatters, prior_covs, eps, out):
    """Write the density covariance of slot k into `out` (3x3)."""
    w = weights[k]
    if w >= 2.0:
        inv = 1.0 / (w - 1.0)
        for r in range(3):
            for s in range(3):
                out[r, s] = scatters[k, r, s] * inv
            out[r, r] += eps
    else:
        for r in range(3):
            for s in range(3):
                out[r, s] = prior_covs[k, r, s]


@njit(cache=True, nogil=True)
def predictive_density(p, p_cov, k, weights, means, scatters, prior_covs, eps, work):
    """Density of point p under slot k with the measurement covariance added."""
    component_covariance(k, weights, scatters, prior_covs, eps, work)
    for r in range(3):
        for s in range(3):
            work[r, s] += p_cov[r, s]
    dens = gaussian_density(p[0] - means[k, 0], p[1] - means[k, 1], p[2] - means[k, 2], work)
    if dens < 0.0:
        return 0.0
    return dens


@njit(cache=True, nogil=True)
def base_density(p_cov, base_var, work):
    """Normalization constant of N(p; p, base_var * I + p_cov)."""
    for r in range(3):
        for s in range(3):
            work[r, s] = p_cov[r, s]
        work[r, r] += base_var
    dens = gaussian_density(0.0, 0.0, 0.0, work)
    if dens < 0.0:
        return 0.0
    return dens


@njit(cache=True, nogil=True)
def fidelity_discount(p_cov, tau2):
    """Noise discount exp(-trace(p_cov) / tau^2)."""
    return math.exp(-(p_cov[0, 0] + p_cov[1, 1] + p_cov[2, 2]) / tau2)


# ============================================
# CRP ASSIGNMENT
# ============================================

@njit(cache=True, nogil=True)
def crp_scores(p, p_cov, weights, means, scatters, prior_covs, size, point_count,
               alpha_j, base_var, eps, use_likelihood, scores, work):
    """
    Fill scores[0:size] with existing-component scores and scores[size] with
    the new-component score, prior mass times predictive likelihood.
    """
    denom = point_count + alpha_j
    for k in range(size):
        prior = weights[k] / denom
        if use_likelihood:
            scores[k] = prior * predictive_density(p, p_cov, k, weights, means, scatters,
                                                   prior_covs, eps, work)
        else:
            scores[k] = prior
    prior_new = alpha_j / denom
    if use_likelihood:
        scores[size] = prior_new * base_density(p_cov, base_var, work)
    else:
        scores[size] = prior_new


@njit(cache=True, nogil=True)
def choose_slot(p, scores, size, truncation, means, sample, u):
    """
    Pick an option from filled scores. Returns (slot, posterior); slot == size
    means instantiate a new component.

    The new option is disabled once the block holds `truncation` components.
    Ties go to the lowest index, existing before new. If every allowed score is
    zero the nearest mean wins.
    """
    allow_new = size < truncation
    total = 0.0
    for k in range(size):
        total += scores[k]
    if allow_new:
        total += scores[size]

    if total > 0.0:
        if sample:
            target = u * total
            acc = 0.0
            last = -1
            for k in range(size + 1):
                if k == size and not allow_new:
                    break
                if scores[k] > 0.0:
                    last = k
                acc += scores[k]
                if acc > target and scores[k] > 0.0:
                    return k, scores[k] / total
            return last, scores[last] / total
        best = -1
        best_score = -1.0
        for k in range(size):
            if scores[k] > best_score:
                best = k
                best_score = scores[k]
        if allow_new and scores[size] > best_score:
            best = size
            best_score = scores[size]
        return best, best_score / total

    if allow_new:
        return size, 1.0
    best = 0
    best_d = np.inf
    for k in range(size):
        dx = p[0] - means[k, 0]
        dy = p[1] - means[k, 1]
        dz = p[2] - means[k, 2]
        d = dx * dx + dy * dy + dz * dz
        if d < best_d:
            best = k
            best_d = d
    return best, 0.0


# ============================================
# PARAMETER UPDATES
# ============================================

@njit(cache=True, nogil=True)
def welford_update(k, p, weights, means, scatters):
    """Absorb point p into slot k (count, mean and scatter recursions)."""
    w = weights[k]
    d0 = p[0] - means[k, 0]
    d1 = p[1] - means[k, 1]
    d2 = p[2] - means[k, 2]
    factor = w / (w + 1.0)
    d = (d0, d1, d2)
    for r in range(3):
        for s in range(3):
            scatters[k, r, s] += factor * d[r] * d[s]
    for r in range(3):
        means[k, r] = (w * means[k, r] + p[r]) / (w + 1.0)
    weights[k] = w + 1.0


@njit(cache=True, nogil=True)
def instantiate_slot(k, p, p_cov, weights, means, scatters, prior_covs, births, base_var, frame):
    """Seed slot k from a single point."""
    weights[k] = 1.0
    for r in range(3):
        means[k, r] = p[r]
        for s in range(3):
            scatters[k, r, s] = 0.0
            prior_covs[k, r, s] = p_cov[r, s]
        prior_covs[k, r, r] += base_var
    births[k] = frame


# ============================================
# BLOCK INTEGRATION
# ============================================

@njit(cache=True, nogil=True)
def integrate_block(points, covs, uniforms, weights, means, scatters, prior_covs, confidence,
                    births, size, point_count, alpha_j, base_var, eps, tau2, frame,
                    use_likelihood, sample):
    """
    Run sequential CRP inference over one block's points, in order.

    Args:
        points: (m, 3) world points routed to the block
        covs: (m, 3, 3) measurement covariances
        uniforms: (m,) uniforms for sampled assignment (ignored for MAP)
        weights..births: block state arrays, updated in place
        size: components currently held
        point_count: points routed to the block before this call
        alpha_j: alpha / J for this frame
        base_var: base_sigma^2
        eps: covariance regularization
        tau2: fidelity noise scale squared
        frame: current frame index
        use_likelihood: multiply CRP priors by predictive likelihoods
        sample: sample the assignment instead of taking the argmax

    Returns:
        (size, point_count, created)
    """
    truncation = weights.shape[0]
    scores = np.empty(truncation + 1)
    work = np.empty((3, 3))
    created = 0
    for i in range(points.shape[0]):
        p = points[i]
        pc = covs[i]
        crp_scores(p, pc, weights, means, scatters, prior_covs, size, point_count,
                   alpha_j, base_var, eps, use_likelihood, scores, work)
        u = uniforms[i] if sample else 0.0
        k, _ = choose_slot(p, scores, size, truncation, means, sample, u)
        if k == size:
            instantiate_slot(k, p, pc, weights, means, scatters, prior_covs, births, base_var, frame)
            fid = predictive_density(p, pc, k, weights, means, scatters, prior_covs, eps, work)
            confidence[k] = fid * fidelity_discount(pc, tau2)
            size += 1
            created += 1
        else:
            fid = predictive_density(p, pc, k, weights, means, scatters, prior_covs, eps, work)
            welford_update(k, p, weights, means, scatters)
            confidence[k] += fid * fidelity_discount(pc, tau2)
        point_count += 1
    return size, point_count, created
