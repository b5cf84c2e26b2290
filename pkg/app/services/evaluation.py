"""
Reconstruction Evaluation Service

Cloud-to-reference distances for sampled maps. Mesh references use exact
point-to-triangle distances accelerated by a bounding-volume hierarchy;
point-cloud references use nearest-neighbor distances from a k-d tree.
"""

import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from numba import njit, prange
from scipy.spatial import cKDTree

from app.core.exceptions import EvalError
from app.io.mesh import Reference

logger = logging.getLogger(__name__)

LEAF_SIZE = 4
MAX_DEPTH = 64


# ============================================
# POINT-TRIANGLE KERNELS
# ============================================

@njit(cache=True, nogil=True)
def _dot(ax, ay, az, bx, by, bz):
    return ax * bx + ay * by + az * bz


@njit(cache=True, nogil=True)
def closest_point_on_triangle(a, b, c, q):
    """
    Point of triangle (a, b, c) closest to q.

    Voronoi-region walk over the vertices, edges and face (Ericson's
    ClosestPtPointTriangle).
    """
    abx, aby, abz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    acx, acy, acz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    apx, apy, apz = q[0] - a[0], q[1] - a[1], q[2] - a[2]
    d1 = _dot(abx, aby, abz, apx, apy, apz)
    d2 = _dot(acx, acy, acz, apx, apy, apz)
    if d1 <= 0.0 and d2 <= 0.0:
        return a[0], a[1], a[2]

    bpx, bpy, bpz = q[0] - b[0], q[1] - b[1], q[2] - b[2]
    d3 = _dot(abx, aby, abz, bpx, bpy, bpz)
    d4 = _dot(acx, acy, acz, bpx, bpy, bpz)
    if d3 >= 0.0 and d4 <= d3:
        return b[0], b[1], b[2]

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a[0] + v * abx, a[1] + v * aby, a[2] + v * abz

    cpx, cpy, cpz = q[0] - c[0], q[1] - c[1], q[2] - c[2]
    d5 = _dot(abx, aby, abz, cpx, cpy, cpz)
    d6 = _dot(acx, acy, acz, cpx, cpy, cpz)
    if d6 >= 0.0 and d5 <= d6:
        return c[0], c[1], c[2]

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a[0] + w * acx, a[1] + w * acy, a[2] + w * acz

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b[0] + w * (c[0] - b[0]), b[1] + w * (c[1] - b[1]), b[2] + w * (c[2] - b[2])

    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a[0] + v * abx + w * acx, a[1] + v * aby + w * acy, a[2] + v * abz + w * acz


@njit(cache=True, nogil=True)
def point_triangle_distance2(tri, q):
    """Squared distance from q to triangle tri (3, 3)."""
    x, y, z = closest_point_on_triangle(tri[0], tri[1], tri[2], q)
    dx, dy, dz = q[0] - x, q[1] - y, q[2] - z
    return dx * dx + dy * dy + dz * dz


@njit(cache=True, parallel=True)
def brute_force_distances(points, triangles):
    """Distance from every point to its nearest triangle by a full scan."""
    out = np.empty(points.shape[0])
    for i in prange(points.shape[0]):
        best = np.inf
        for t in range(triangles.shape[0]):
            d = point_triangle_distance2(triangles[t], points[i])
            if d < best:
                best = d
        out[i] = np.sqrt(best)
    return out


# ============================================
# BOUNDING VOLUME HIERARCHY
# ============================================

@dataclass
class TriangleBVH:
    """
    Flattened bounding-volume hierarchy over a triangle soup.

    Node i covers triangles order[start[i]:start[i] + count[i]] when it is a
    leaf (count > 0); inner nodes have children left[i] and right[i].
    """
    triangles: np.ndarray
    order: np.ndarray
    box_min: np.ndarray
    box_max: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray

    @classmethod
    def build(cls, triangles: np.ndarray, leaf_size: int = LEAF_SIZE) -> "TriangleBVH":
        """Median split along the longest centroid axis, top down."""
        tris = np.ascontiguousarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
        centroids = tris.mean(axis=1)
        lo_all = tris.min(axis=1)
        hi_all = tris.max(axis=1)
        order = np.arange(tris.shape[0], dtype=np.int64)

        box_min, box_max, left, right, start, count = [], [], [], [], [], []

        def new_node(s: int, e: int) -> int:
            idx = order[s:e]
            box_min.append(lo_all[idx].min(axis=0))
            box_max.append(hi_all[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(s)
            count.append(e - s)
            return len(box_min) - 1

        root = new_node(0, tris.shape[0])
        stack = [(root, 0, tris.shape[0])]
        while stack:
            node, s, e = stack.pop()
            if e - s <= leaf_size:
                continue
            idx = order[s:e]
            c = centroids[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            order[s:e] = idx[np.argsort(c[:, axis], kind="stable")]
            mid = (s + e) // 2
            l_node = new_node(s, mid)
            r_node = new_node(mid, e)
            left[node], right[node] = l_node, r_node
            count[node] = 0
            stack.append((l_node, s, mid))
            stack.append((r_node, mid, e))

        return cls(
            triangles=tris,
            order=order,
            box_min=np.asarray(box_min),
            box_max=np.asarray(box_max),
            left=np.asarray(left, dtype=np.int64),
            right=np.asarray(right, dtype=np.int64),
            start=np.asarray(start, dtype=np.int64),
            count=np.asarray(count, dtype=np.int64),
        )

    def distances(self, points: np.ndarray) -> np.ndarray:
        """Exact distance from every point to the nearest triangle."""
        pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        return _bvh_distances(pts, self.triangles, self.order, self.box_min, self.box_max,
                              self.left, self.right, self.start, self.count)


@njit(cache=True, nogil=True)
def _box_distance2(q, lo, hi):
    d2 = 0.0
    for a in range(3):
        if q[a] < lo[a]:
            d2 += (lo[a] - q[a]) ** 2
        elif q[a] > hi[a]:
            d2 += (q[a] - hi[a]) ** 2
    return d2


@njit(cache=True, parallel=True)
def _bvh_distances(points, triangles, order, box_min, box_max, left, right, start, count):
    out = np.empty(points.shape[0])
    for i in prange(points.shape[0]):
        q = points[i]
        stack = np.empty(2 * MAX_DEPTH, dtype=np.int64)
        top = 0
        stack[top] = 0
        top += 1
        best = np.inf
        while top > 0:
            top -= 1
            node = stack[top]
            if _box_distance2(q, box_min[node], box_max[node]) >= best:
                continue
            if count[node] > 0:
                for k in range(start[node], start[node] + count[node]):
                    d = point_triangle_distance2(triangles[order[k]], q)
                    if d < best:
                        best = d
            else:
                l_node = left[node]
                r_node = right[node]
                dl = _box_distance2(q, box_min[l_node], box_max[l_node])
                dr = _box_distance2(q, box_min[r_node], box_max[r_node])
                # visit the nearer child first
                if dl < dr:
                    stack[top] = r_node
                    stack[top + 1] = l_node
                else:
                    stack[top] = l_node
                    stack[top + 1] = r_node
                top += 2
        out[i] = np.sqrt(best)
    return out


# ============================================
# DISTANCE STATISTICS
# ============================================

def drop_degenerate(triangles: np.ndarray) -> np.ndarray:
    """Remove zero-area triangles, warning about how many were dropped."""
    tris = np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
    cross = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    area2 = np.einsum("ij,ij->i", cross, cross)
    scale = np.max(np.abs(tris)) if tris.size else 1.0
    keep = area2 > (1e-12 * max(scale, 1e-12) ** 2) ** 2
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        logger.warning(f"Skipping {dropped} degenerate triangle(s)")
    return tris[keep]


def point_distances(samples: np.ndarray, reference: Union[Reference, np.ndarray]) -> np.ndarray:
    """
    Distance in meters from each sample to the reference.

    A bare (N, 3) array is treated as a point cloud, a (T, 3, 3) array as
    triangles.

    Raises:
        EvalError: If samples or reference are empty
    """
    pts = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise EvalError("No samples to evaluate")

    if isinstance(reference, Reference):
        tris, cloud = reference.triangles, reference.points
    else:
        ref = np.asarray(reference, dtype=np.float64)
        tris, cloud = (ref, None) if ref.ndim == 3 else (None, ref.reshape(-1, 3))

    if tris is not None:
        tris = drop_degenerate(tris)
        if tris.shape[0] == 0:
            raise EvalError("Reference mesh has no usable triangle")
        return TriangleBVH.build(tris).distances(pts)

    if cloud is None or cloud.shape[0] == 0:
        raise EvalError("Reference point cloud is empty")
    dist, _ = cKDTree(cloud).query(pts, workers=-1)
    return np.asarray(dist, dtype=np.float64)


def cloud_distance(samples: np.ndarray, reference: Union[Reference, np.ndarray]) -> Tuple[float, float]:
    """
    Mean and population standard deviation of the cloud-to-reference distance.

    Args:
        samples: (N, 3) points in meters
        reference: Reference mesh/cloud, (T, 3, 3) triangles or (M, 3) points

    Returns:
        (mean_cm, std_cm)

    Raises:
        EvalError: If either input is empty

    Example:
        A single sample at (0, 0, 1) against the unit square at z = 0 gives
        (100.0, 0.0).
    """
    d = point_distances(samples, reference) * 100.0
    mean = float(np.mean(d))
    std = float(np.std(d))
    logger.info(f"Cloud distance over {d.size} samples: mean {mean:.4f} cm, std {std:.4f} cm")
    return mean, std
