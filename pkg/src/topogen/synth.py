"""Synthetic shape corpus: spheres, tori, and welded two-hole tori.

Noise-free surfaces come from golden-ratio lattices, so a fixed call is
deterministic and the farthest-point landmarks it induces are evenly spread.
Gaussian surface noise is opt-in and seeded.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import BadInputError
from .geometry import PointCloud, save_cloud_binary
from .rng import make_rng

_GOLDEN = (1 + 5 ** 0.5) / 2

SHAPE_NAMES = ("sphere", "torus", "double_torus")


def _noisify(pts: np.ndarray, noise: float, seed: int, label: str) -> np.ndarray:
    if noise < 0:
        raise BadInputError(f"noise must be >= 0, got {noise}")
    if noise == 0:
        return pts
    rng = make_rng(seed, label)
    return pts + noise * rng.standard_normal(pts.shape)


def sphere(n: int, radius: float = 1.0, noise: float = 0.0, seed: int = 0) -> PointCloud:
    """Fibonacci-lattice sphere: near-uniform area coverage."""
    if n < 1:
        raise BadInputError("n must be >= 1")
    i = np.arange(n)
    z = 1.0 - (2 * i + 1) / n
    theta = 2 * np.pi * i / _GOLDEN
    rxy = np.sqrt(np.clip(1 - z * z, 0, None))
    pts = radius * np.stack([rxy * np.cos(theta), rxy * np.sin(theta), z], axis=1)
    return PointCloud(_noisify(pts, noise, seed, "sphere"), id=f"sphere{n}")


def _torus_lattice(n: int, ring: float, tube: float) -> np.ndarray:
    # golden-ratio winding in the ring angle, single slow sweep in the tube
    # angle: the torus analog of the Fibonacci sphere
    i = np.arange(n)
    u = 2 * np.pi * ((i / _GOLDEN) % 1.0)
    v = 2 * np.pi * i / n
    return np.stack([(ring + tube * np.cos(v)) * np.cos(u),
                     (ring + tube * np.cos(v)) * np.sin(u),
                     tube * np.sin(v)], axis=1)


def torus(n: int, ring: float = 1.0, tube: float = 0.35,
          noise: float = 0.0, seed: int = 0) -> PointCloud:
    if n < 1:
        raise BadInputError("n must be >= 1")
    if not 0 < tube < ring:
        raise BadInputError(f"need 0 < tube < ring, got tube={tube}, ring={ring}")
    pts = _torus_lattice(n, ring, tube)
    return PointCloud(_noisify(pts, noise, seed, "torus"), id=f"torus{n}")


def double_torus(n: int, ring: float = 1.0, tube: float = 0.35,
                 noise: float = 0.0, seed: int = 0) -> PointCloud:
    """Two tori welded along overlapping rings: a genus-2 point cloud.

    Ring centers sit 2·ring − tube apart so the tubes merge; lattice points
    of each torus falling inside the other's solid tube are dropped, which
    opens the weld. Not a smooth genus-2 surface at the seam, but carries the
    right loop structure for a third shape class.
    """
    if n < 2:
        raise BadInputError("n must be >= 2")
    if not 0 < tube < ring:
        raise BadInputError(f"need 0 < tube < ring, got tube={tube}, ring={ring}")
    half = 0.5 * (2 * ring - tube)
    m = n  # oversample, cull, then trim to n
    keep_pts = []
    grow = 1.3
    while True:
        base = _torus_lattice(int(m * grow), ring, tube)
        left = base + np.array([-half, 0.0, 0.0])
        right = base * np.array([1.0, -1.0, 1.0]) + np.array([half, 0.0, 0.0])

        def inside(p, cx):
            q = p - np.array([cx, 0.0, 0.0])
            rad = np.sqrt(q[:, 0] ** 2 + q[:, 1] ** 2)
            return (rad - ring) ** 2 + q[:, 2] ** 2 < (0.98 * tube) ** 2

        both = np.concatenate([left[~inside(left, half)], right[~inside(right, -half)]])
        if len(both) >= n:
            keep_pts = both
            break
        grow *= 1.3
    # thin deterministically to exactly n, keeping the interleaved order
    sel = np.linspace(0, len(keep_pts) - 1, n).round().astype(int)
    pts = keep_pts[sel]
    return PointCloud(_noisify(pts, noise, seed, "double_torus"), id=f"double_torus{n}")


def make_cloud(shape: str, n: int, noise: float = 0.0, seed: int = 0,
               scale: float = 1.0) -> PointCloud:
    if shape not in SHAPE_NAMES:
        raise BadInputError(f"unknown shape {shape!r}, choose from {SHAPE_NAMES}")
    fn = {"sphere": sphere, "torus": torus, "double_torus": double_torus}[shape]
    c = fn(n, noise=noise, seed=seed)
    return PointCloud(c.points * scale, id=c.id)


def write_dataset(out_dir: str | Path, n_clouds: int, n_points: int,
                  shapes: tuple[str, ...] = ("sphere", "torus"),
                  noise: float = 0.01, seed: int = 0) -> list[Path]:
    """Round-robin over shape classes with per-cloud scale jitter in [0.8, 1.2]."""
    if n_clouds < 1:
        raise BadInputError("n_clouds must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n_clouds):
        shape = shapes[i % len(shapes)]
        rng = make_rng(seed, f"cloud{i}")
        scale = float(rng.uniform(0.8, 1.2))
        c = make_cloud(shape, n_points, noise=noise, seed=int(seed) + 1000 + i,
                       scale=scale)
        path = out / f"{i:04d}_{shape}.tpc"
        save_cloud_binary(path, PointCloud(c.points, id=f"{i:04d}_{shape}"))
        paths.append(path)
    return paths
