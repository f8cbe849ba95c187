"""Vietoris-Rips persistent homology over the two-element field.

The pipeline is: distance matrix -> clique filtration (simplex appears at the
max of its edge lengths) -> boundary matrix -> left-to-right column reduction
-> birth/death pairing -> persistence diagrams per homology dimension.

`betti_numbers` recomputes ranks at a fixed radius by dense Gaussian
elimination and shares no code with the reduction, so the two routes can be
checked against each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from pathlib import Path

import numpy as np

from .errors import BadInputError, InvariantError, ResourceCapError
from .geometry import PointCloud

MAX_SIMPLEX_DIM = 3
DEFAULT_SIMPLEX_CAP = 5_000_000

_PD_HEADER = "# topogen-pd v1"


@dataclass(frozen=True)
class Simplex:
    """Sorted vertex tuple plus the radius at which it enters the filtration."""

    vertices: tuple[int, ...]
    value: float

    @property
    def dim(self) -> int:
        return len(self.vertices) - 1


@dataclass
class Filtration:
    """Simplices sorted by (value, dimension, lexicographic vertices).

    That order guarantees every face precedes its cofaces, since a face never
    has a larger filtration value or an equal value with higher dimension.
    max_dim is the requested cap, which the realized complex may not reach
    (a single point has no edges regardless of the cap).
    """

    simplices: list[Simplex]
    r_max: float
    n_points: int
    max_dim: int

    def __len__(self) -> int:
        return len(self.simplices)


@dataclass
class BoundaryMatrix:
    """Sparse Z/2 boundary columns in filtration order.

    columns[j] lists the filtration positions of the codimension-1 faces of
    simplex j (empty for vertices); dims[j] is the simplex dimension.
    """

    columns: list[tuple[int, ...]]
    dims: np.ndarray


@dataclass
class Pairing:
    """Output of reduction: (birth_pos, death_pos) pairs and unpaired creators."""

    pairs: list[tuple[int, int]]
    essentials: list[int]


@dataclass
class PersistenceDiagram:
    dimension: int
    pairs: np.ndarray                               # (m, 2) finite (birth, death), birth < death
    essential: np.ndarray = field(default_factory=lambda: np.empty(0))

    def betti_at(self, r: float) -> int:
        """Number of classes alive at radius r: born at or before, dead strictly after."""
        alive = 0
        if self.pairs.size:
            alive += int(np.sum((self.pairs[:, 0] <= r) & (r < self.pairs[:, 1])))
        if self.essential.size:
            alive += int(np.sum(self.essential <= r))
        return alive


def _pair_counts(n: int, max_dim: int) -> int:
    return sum(comb(n, k + 1) for k in range(max_dim + 1))


def build_vr_filtration(cloud: PointCloud, max_dim: int = MAX_SIMPLEX_DIM,
                        r_max: float | None = None,
                        simplex_cap: int = DEFAULT_SIMPLEX_CAP) -> Filtration:
    """Clique (Vietoris-Rips) filtration up to `max_dim`.

    An edge appears at the Euclidean distance of its endpoints; a higher
    simplex at the max over its edges. Simplices with value above r_max are
    dropped. r_max defaults to the point-set diameter, which makes the final
    complex a full simplex (contractible), so H1/H2 have no essential classes.
    """
    if not 1 <= max_dim <= MAX_SIMPLEX_DIM:
        raise BadInputError(f"max_dim must be in [1, {MAX_SIMPLEX_DIM}], got {max_dim}")
    n = cloud.n
    pts = cloud.points
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    if r_max is None:
        r_max = float(dist.max())
        if r_max == 0.0:
            r_max = 1.0
    if r_max <= 0:
        raise BadInputError(f"r_max must be positive, got {r_max}")
    if _pair_counts(n, max_dim) > simplex_cap:
        raise ResourceCapError(
            f"up to {_pair_counts(n, max_dim)} simplices for n={n}, max_dim={max_dim}; "
            f"cap is {simplex_cap}")

    entries: list[tuple[float, int, tuple[int, ...]]] = [(0.0, 0, (i,)) for i in range(n)]
    for d in range(1, max_dim + 1):
        if n < d + 1:
            break
        idx = np.array(list(combinations(range(n), d + 1)), dtype=np.int64)
        vals = np.zeros(len(idx))
        for a in range(d + 1):
            for b in range(a + 1, d + 1):
                np.maximum(vals, dist[idx[:, a], idx[:, b]], out=vals)
        keep = vals <= r_max
        for row, val in zip(idx[keep].tolist(), vals[keep]):
            entries.append((float(val), d, tuple(row)))
    entries.sort(key=lambda e: (e[0], e[1], e[2]))
    simplices = [Simplex(vertices=v, value=val) for val, _, v in entries]
    return Filtration(simplices=simplices, r_max=float(r_max), n_points=n,
                      max_dim=max_dim)


def boundary_matrix(filt: Filtration) -> BoundaryMatrix:
    """Column j holds the filtration positions of simplex j's faces."""
    pos = {s.vertices: i for i, s in enumerate(filt.simplices)}
    cols: list[tuple[int, ...]] = []
    dims = np.empty(len(filt.simplices), dtype=np.int64)
    for j, s in enumerate(filt.simplices):
        dims[j] = s.dim
        if s.dim == 0:
            cols.append(())
            continue
        rows = []
        for f in combinations(s.vertices, s.dim):
            fp = pos.get(f)
            if fp is None:
                raise InvariantError(f"face {f} of {s.vertices} missing from filtration")
            rows.append(fp)
        rows.sort()
        cols.append(tuple(rows))
    return BoundaryMatrix(columns=cols, dims=dims)


def reduce(matrix: BoundaryMatrix, twist: bool = False) -> Pairing:
    """Left-to-right column reduction over Z/2.

    Repeatedly adds the earlier column holding the same lowest row until the
    current column's lowest row is unique or the column empties. Columns of
    different dimensions never share rows, so dimensions are processed as
    independent blocks; within a block the column order is the filtration
    order, which makes this exactly the classic single-matrix algorithm.

    With `twist` on, dimensions are processed from high to low and the birth
    column of every pair is cleared before its block is reduced (it would
    reduce to zero anyway). The pairing is identical; only work is saved.
    """
    dims = matrix.dims
    n = len(matrix.columns)
    max_dim = int(dims.max(initial=0))
    by_dim: list[list[int]] = [[] for _ in range(max_dim + 1)]
    for j in range(n):
        by_dim[dims[j]].append(j)

    pairs: list[tuple[int, int]] = []
    paired = np.zeros(n, dtype=bool)
    cleared: set[int] = set()

    dim_order = range(max_dim, 0, -1) if twist else range(1, max_dim + 1)
    for d in dim_order:
        # low_cols maps pivot row -> reduced column (an int bitmask over rows)
        low_cols: dict[int, int] = {}
        for j in by_dim[d]:
            if j in cleared:
                continue
            col = 0
            for r in matrix.columns[j]:
                col |= 1 << r
            while col:
                piv = col.bit_length() - 1
                other = low_cols.get(piv)
                if other is None:
                    low_cols[piv] = col
                    pairs.append((piv, j))
                    paired[piv] = True
                    paired[j] = True
                    if twist:
                        cleared.add(piv)
                    break
                col ^= other

    essentials = [j for j in range(n) if not paired[j]]
    return Pairing(pairs=pairs, essentials=essentials)


def persistence_diagrams(filt: Filtration, twist: bool = False) -> dict[int, PersistenceDiagram]:
    """Diagrams for dimensions 0 .. max_dim-1.

    Zero-persistence pairs (birth == death) are dropped; unpaired creators
    become essential classes. Creators of the top dimension are discarded
    since their homology is never reported.
    """
    if filt.max_dim < 1:
        raise BadInputError("filtration cap must be >= 1 to report any diagram")
    pairing = reduce(boundary_matrix(filt), twist=twist)
    top = filt.max_dim
    pair_lists: dict[int, list[tuple[float, float]]] = {k: [] for k in range(top)}
    ess_lists: dict[int, list[float]] = {k: [] for k in range(top)}
    simp = filt.simplices
    for b, dth in pairing.pairs:
        k = simp[b].dim
        birth, death = simp[b].value, simp[dth].value
        if birth == death:
            continue
        pair_lists[k].append((birth, death))
    for j in pairing.essentials:
        k = simp[j].dim
        if k < top:
            ess_lists[k].append(simp[j].value)
    out = {}
    for k in range(top):
        p = np.array(pair_lists[k]) if pair_lists[k] else np.empty((0, 2))
        e = np.array(sorted(ess_lists[k])) if ess_lists[k] else np.empty(0)
        out[k] = PersistenceDiagram(dimension=k, pairs=p, essential=e)
    return out


def _gf2_rank(m: np.ndarray) -> int:
    """Rank of a dense 0/1 matrix over Z/2 by plain Gaussian elimination."""
    a = m.astype(np.uint8).copy()
    rows, cols = a.shape
    rank = 0
    for c in range(cols):
        piv = None
        for r in range(rank, rows):
            if a[r, c]:
                piv = r
                break
        if piv is None:
            continue
        a[[rank, piv]] = a[[piv, rank]]
        hits = a[:, c].astype(bool)
        hits[rank] = False
        a[hits] ^= a[rank]
        rank += 1
        if rank == rows:
            break
    return rank


def betti_numbers(filt: Filtration, r: float) -> tuple[int, int, int]:
    """(beta0, beta1, beta2) of the sub-complex at radius r.

    Independent oracle: builds dense boundary matrices of the sub-filtration
    and computes beta_k = #k-simplices - rank d_k - rank d_{k+1} by Gaussian
    elimination. Never touches the reduction code path.
    """
    if r > filt.r_max:
        raise BadInputError(f"radius {r} exceeds filtration r_max {filt.r_max}")
    alive = [s for s in filt.simplices if s.value <= r]
    by_dim: dict[int, list[tuple[int, ...]]] = {}
    for s in alive:
        by_dim.setdefault(s.dim, []).append(s.vertices)
    counts = {k: len(v) for k, v in by_dim.items()}
    ranks = {}
    for k in range(1, 4):
        if not by_dim.get(k) or not by_dim.get(k - 1):
            ranks[k] = 0
            continue
        faces = {v: i for i, v in enumerate(by_dim[k - 1])}
        m = np.zeros((len(faces), len(by_dim[k])), dtype=np.uint8)
        for j, verts in enumerate(by_dim[k]):
            for f in combinations(verts, k):
                m[faces[f], j] = 1
        ranks[k] = _gf2_rank(m)
    betti = []
    for k in range(3):
        nk = counts.get(k, 0)
        betti.append(nk - ranks.get(k, 0) - ranks.get(k + 1, 0))
    return tuple(betti)


# ---------------------------------------------------------------------------
# Diagram file format: CSV rows `dim,birth,death` with `inf` death for
# essential classes, under a `# topogen-pd v1 ...` header.

def save_diagrams(path: str | Path, diagrams: dict[int, PersistenceDiagram],
                  n_points: int, r_max: float) -> None:
    with open(path, "w") as fh:
        fh.write(f"{_PD_HEADER} n_points={n_points} r_max={r_max!r}\n")
        fh.write("dim,birth,death\n")
        for k in sorted(diagrams):
            pd = diagrams[k]
            for b, d in pd.pairs.tolist():
                fh.write(f"{k},{b!r},{d!r}\n")
            for b in pd.essential.tolist():
                fh.write(f"{k},{b!r},inf\n")


def load_diagrams(path: str | Path) -> tuple[dict[int, PersistenceDiagram], dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(_PD_HEADER):
        raise BadInputError(f"{path}: missing '{_PD_HEADER}' header")
    meta = {}
    for tok in lines[0][len(_PD_HEADER):].split():
        key, _, val = tok.partition("=")
        meta[key] = float(val) if key == "r_max" else int(val)
    pair_lists: dict[int, list] = {}
    ess_lists: dict[int, list] = {}
    for line in lines[1:]:
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("dim,"):
            continue
        k_s, b_s, d_s = line.split(",")
        k = int(k_s)
        if d_s == "inf":
            ess_lists.setdefault(k, []).append(float(b_s))
        else:
            pair_lists.setdefault(k, []).append((float(b_s), float(d_s)))
    dims = sorted(set(pair_lists) | set(ess_lists))
    out = {}
    for k in dims:
        p = np.array(pair_lists.get(k, [])).reshape(-1, 2)
        e = np.array(ess_lists.get(k, []))
        out[k] = PersistenceDiagram(dimension=k, pairs=p, essential=e)
    return out, meta
