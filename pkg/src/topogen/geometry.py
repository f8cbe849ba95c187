"""Point-cloud geometry: global normalization, farthest-point sampling,
trilinear voxelization/devoxelization, and patch tokenization.

All operations are pure and deterministic. The voxel domain is the cube
[-1, 1]^3; out-of-range coordinates are clamped, never rejected, so noisy
diffusion states pass through unharmed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadInputError

ALLOWED_RESOLUTIONS = (16, 32, 64)
OCCUPANCY_EPS = 1e-8

_TPC_MAGIC = b"TPC1"


@dataclass
class PointCloud:
    """N points with xyz coordinates, row per point."""

    points: np.ndarray
    id: str | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise BadInputError(f"point cloud must be (N, 3) with N >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise BadInputError("point cloud contains non-finite coordinates")
        self.points = pts

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass
class NormStats:
    """Shared affine map fitted on a whole dataset: x -> (x - mean) / scale."""

    mean: np.ndarray
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (points - self.mean) / self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return points * self.scale + self.mean


@dataclass
class VoxelGrid:
    """Dense V^3 grid: splatted coordinate field plus accumulated occupancy."""

    resolution: int
    coords: np.ndarray      # (V, V, V, 3)
    occupancy: np.ndarray   # (V, V, V)


@dataclass
class PatchTokens:
    """Row-major sequence of flattened p^3 patches cut from a voxel grid."""

    tokens: np.ndarray      # (L, 3 * p^3)
    resolution: int
    patch: int

    @property
    def length(self) -> int:
        return self.tokens.shape[0]


def normalize(clouds: list[PointCloud]) -> tuple[list[PointCloud], NormStats]:
    """Fit one affine map on every point of every cloud and apply it everywhere.

    Mean is per-axis over the pooled points; scale is a single scalar (std of
    all centered coordinates) so shapes are not distorted anisotropically.
    """
    if not clouds:
        raise BadInputError("normalize needs at least one cloud")
    pooled = np.concatenate([c.points for c in clouds], axis=0)
    mean = pooled.mean(axis=0)
    scale = float(np.std(pooled - mean))
    if scale == 0.0:
        scale = 1.0
    stats = NormStats(mean=mean, scale=scale)
    out = [PointCloud(stats.apply(c.points), id=c.id) for c in clouds]
    return out, stats


def farthest_point_sample(cloud: PointCloud, k: int, seed: int = 0) -> np.ndarray:
    """Greedy max-min landmark selection.

    The start index is seed mod N; each following pick maximizes the minimum
    distance to the already-selected set, ties resolved to the lowest index.
    """
    n = cloud.n
    if not 1 <= k <= n:
        raise BadInputError(f"k={k} out of range [1, {n}]")
    pts = cloud.points
    start = seed % n
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = start
    min_d2 = np.sum((pts - pts[start]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(min_d2))  # argmax returns the first max: lowest index wins ties
        chosen[i] = nxt
        min_d2 = np.minimum(min_d2, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return chosen


def _corner_weights(points: np.ndarray, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear stencil shared by splat and interpolation.

    Returns flat grid indices (N, 8) and weights (N, 8) for the 8 nodes
    surrounding each (clamped) point. Weights sum to 1 per point.
    """
    v = resolution
    pts = np.clip(points, -1.0, 1.0)
    u = (pts + 1.0) * (v - 1) / 2.0                        # [0, V-1] per axis
    i0 = np.clip(np.floor(u).astype(np.int64), 0, v - 2)
    f = u - i0                                              # fractional part, f=1 on the top face
    idx = np.empty((pts.shape[0], 8), dtype=np.int64)
    w = np.empty((pts.shape[0], 8))
    for c in range(8):
        dx, dy, dz = (c >> 2) & 1, (c >> 1) & 1, c & 1
        ix = i0[:, 0] + dx
        iy = i0[:, 1] + dy
        iz = i0[:, 2] + dz
        idx[:, c] = (ix * v + iy) * v + iz
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        wy = f[:, 1] if dy else 1.0 - f[:, 1]
        wz = f[:, 2] if dz else 1.0 - f[:, 2]
        w[:, c] = wx * wy * wz
    return idx, w


def voxelize(cloud: PointCloud, resolution: int) -> VoxelGrid:
    """Trilinear splat of each point's own xyz value onto the grid.

    Occupancy accumulates the splat weights; the coords field holds the
    weight-averaged coordinate value wherever occupancy exceeds epsilon.
    """
    if resolution not in ALLOWED_RESOLUTIONS:
        raise BadInputError(f"resolution {resolution} not in {ALLOWED_RESOLUTIONS}")
    v = resolution
    idx, w = _corner_weights(cloud.points, v)
    occ = np.zeros(v * v * v)
    coords = np.zeros((v * v * v, 3))
    flat_idx = idx.ravel()
    flat_w = w.ravel()
    np.add.at(occ, flat_idx, flat_w)
    vals = np.repeat(cloud.points, 8, axis=0)
    np.add.at(coords, flat_idx, flat_w[:, None] * vals)
    filled = occ > OCCUPANCY_EPS
    coords[filled] /= occ[filled, None]
    coords[~filled] = 0.0
    return VoxelGrid(resolution=v, coords=coords.reshape(v, v, v, 3),
                     occupancy=occ.reshape(v, v, v))


def devoxelize(grid: VoxelGrid, positions: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of the coords field at each query position."""
    idx, w = _corner_weights(np.asarray(positions, dtype=np.float64), grid.resolution)
    flat = grid.coords.reshape(-1, 3)
    return np.einsum("nc,ncd->nd", w, flat[idx])


def devox_stencil(positions: np.ndarray, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Expose the interpolation stencil for callers that differentiate through it."""
    return _corner_weights(np.asarray(positions, dtype=np.float64), resolution)


def patchify(grid: VoxelGrid, patch: int) -> PatchTokens:
    """Cut the coords field into p^3 blocks, one flattened token per block.

    Token order is row-major over the (V/p)^3 patch lattice; within a token
    the layout is row-major over (p, p, p, 3).
    """
    v = grid.resolution
    if patch < 1 or v % patch != 0:
        raise BadInputError(f"patch {patch} does not divide resolution {v}")
    g = v // patch
    t = grid.coords.reshape(g, patch, g, patch, g, patch, 3)
    t = t.transpose(0, 2, 4, 1, 3, 5, 6).reshape(g * g * g, 3 * patch ** 3)
    return PatchTokens(tokens=np.ascontiguousarray(t), resolution=v, patch=patch)


def unpatchify(tokens: PatchTokens | np.ndarray, resolution: int, patch: int) -> VoxelGrid:
    """Exact inverse of patchify on the coords field; occupancy is set to ones."""
    arr = tokens.tokens if isinstance(tokens, PatchTokens) else np.asarray(tokens)
    v, p = resolution, patch
    if p < 1 or v % p != 0:
        raise BadInputError(f"patch {p} does not divide resolution {v}")
    g = v // p
    if arr.shape != (g ** 3, 3 * p ** 3):
        raise BadInputError(f"token array {arr.shape} does not match V={v}, p={p}")
    t = arr.reshape(g, g, g, p, p, p, 3).transpose(0, 3, 1, 4, 2, 5, 6)
    coords = np.ascontiguousarray(t.reshape(v, v, v, 3))
    return VoxelGrid(resolution=v, coords=coords, occupancy=np.ones((v, v, v)))


def unpatchify_permutation(resolution: int, patch: int) -> np.ndarray:
    """Flat index map: unpatchified (V^3*3,) field = token buffer [perm].

    Lets autodiff code express unpatchify as a single gather.
    """
    v, p = resolution, patch
    g = v // p
    l = g ** 3
    c = 3 * p ** 3
    src = np.arange(l * c).reshape(g, g, g, p, p, p, 3).transpose(0, 3, 1, 4, 2, 5, 6)
    return np.ascontiguousarray(src.reshape(-1))


# ---------------------------------------------------------------------------
# Point-cloud file formats: `x y z` text lines with `#` comments, and a
# binary layout (magic TPC1, u32 count, N*3 little-endian f64).

def save_cloud_text(path: str | Path, cloud: PointCloud) -> None:
    with open(path, "w") as fh:
        if cloud.id:
            fh.write(f"# {cloud.id}\n")
        for x, y, z in cloud.points.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")


def load_cloud_text(path: str | Path) -> PointCloud:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise BadInputError(f"{path}: expected 3 coordinates per line, got {len(parts)}")
            rows.append([float(p) for p in parts])
    if not rows:
        raise BadInputError(f"{path}: no points")
    return PointCloud(np.array(rows), id=Path(path).stem)


def save_cloud_binary(path: str | Path, cloud: PointCloud) -> None:
    with open(path, "wb") as fh:
        fh.write(_TPC_MAGIC)
        fh.write(struct.pack("<I", cloud.n))
        fh.write(cloud.points.astype("<f8").tobytes())


def load_cloud_binary(path: str | Path) -> PointCloud:
    raw = Path(path).read_bytes()
    if raw[:4] != _TPC_MAGIC:
        raise BadInputError(f"{path}: bad magic {raw[:4]!r}")
    (n,) = struct.unpack("<I", raw[4:8])
    body = np.frombuffer(raw[8:], dtype="<f8")
    if body.size != 3 * n:
        raise BadInputError(f"{path}: expected {3 * n} floats, found {body.size}")
    return PointCloud(body.reshape(n, 3).astype(np.float64), id=Path(path).stem)


def load_cloud(path: str | Path) -> PointCloud:
    """Sniff binary magic, fall back to text."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == _TPC_MAGIC:
        return load_cloud_binary(path)
    return load_cloud_text(path)
