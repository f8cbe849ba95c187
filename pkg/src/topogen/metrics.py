"""Generation-quality metrics over point clouds.

Distance conventions follow the usual point-cloud evaluation suite: chamfer
uses squared nearest-neighbor distances, earth mover uses linear distances
under an exact minimum-cost perfect matching. The set-level scores (1-NNA,
coverage) take any cloud-pair distance callable, chamfer by default.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import BadInputError, ResourceCapError
from .geometry import PointCloud

EMD_SIZE_CAP = 1024


def _pts(x, what: str) -> np.ndarray:
    p = x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise BadInputError(f"{what} must be a non-empty (n, d) array, got shape {p.shape}")
    return p


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)


def chamfer(x, y) -> float:
    """Symmetric mean squared nearest-neighbor distance."""
    a = _pts(x, "x")
    b = _pts(y, "y")
    if a.shape[1] != b.shape[1]:
        raise BadInputError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    d2 = _sq_dists(a, b)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def emd(x, y) -> float:
    """Mean linear distance under the exact optimal one-to-one matching."""
    a = _pts(x, "x")
    b = _pts(y, "y")
    if a.shape[1] != b.shape[1]:
        raise BadInputError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] != b.shape[0]:
        raise BadInputError(f"emd needs equal sizes, got {a.shape[0]} and {b.shape[0]}")
    if a.shape[0] > EMD_SIZE_CAP:
        raise ResourceCapError(f"emd size {a.shape[0]} exceeds cap {EMD_SIZE_CAP}")
    d = np.sqrt(_sq_dists(a, b))
    rows, cols = linear_sum_assignment(d)
    return float(d[rows, cols].mean())


def _cloud_list(clouds, what: str) -> list:
    lst = list(clouds)
    if not lst:
        raise BadInputError(f"{what} must contain at least one cloud")
    return lst


def one_nna(gen, ref, dist=chamfer) -> float:
    """Leave-one-out 1-NN classification accuracy over the pooled sets, in %.

    50% means the generated set is indistinguishable from the reference.
    Nearest-neighbor ties resolve to the lowest pool index (generated clouds
    first, then references).
    """
    g = _cloud_list(gen, "gen")
    r = _cloud_list(ref, "ref")
    pool = g + r
    k = len(pool)
    if k < 2:
        raise BadInputError("pooled set needs at least two clouds")
    labels = np.array([0] * len(g) + [1] * len(r))
    d = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            d[i, j] = d[j, i] = dist(pool[i], pool[j])
    np.fill_diagonal(d, np.inf)
    nn = d.argmin(axis=1)  # first index wins ties
    correct = (labels[nn] == labels).sum()
    return float(100.0 * correct / k)


def coverage(gen, ref, dist=chamfer) -> float:
    """Percentage of reference clouds that are some generated cloud's nearest."""
    g = _cloud_list(gen, "gen")
    r = _cloud_list(ref, "ref")
    matched = set()
    for cloud in g:
        dists = [dist(cloud, rc) for rc in r]
        matched.add(int(np.argmin(dists)))
    return float(100.0 * len(matched) / len(r))
