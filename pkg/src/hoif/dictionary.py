"""Basis dictionaries on the unit cube.

Per-coordinate blocks are periodized father wavelets (Haar or Daubechies-6)
or a cosine family; a multivariate dictionary concatenates one block per
coordinate, so ``k = d * k'``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DB6_FILTER",
    "HAAR_FILTER",
    "CascadeTable",
    "DictionarySpec",
    "build_cascade",
    "cascade_table",
    "evaluate_basis",
    "basis_matrix",
]

# Extremal-phase Daubechies filter with six vanishing moments (12 taps),
# normalized so that the taps sum to sqrt(2).
DB6_FILTER = np.array([
    0.111540743350109,
    0.494623890398453,
    0.751133908021096,
    0.315250351709198,
    -0.226264693965440,
    -0.129766867567262,
    0.097501605587323,
    0.027522865530305,
    -0.031582039317486,
    0.000553842201161,
    0.004777257510946,
    -0.001077301085308,
])

HAAR_FILTER = np.array([1.0, 1.0]) / np.sqrt(2.0)

_FILTERS = {"haar": HAAR_FILTER, "db6": DB6_FILTER}


@dataclass(frozen=True)
class CascadeTable:
    """Father wavelet sampled on the dyadic grid ``m / 2**depth``.

    ``values[m]`` is phi at ``m * step`` for ``m = 0 .. support * 2**depth``.
    """

    family: str
    depth: int
    values: np.ndarray

    @property
    def step(self) -> float:
        return 2.0 ** -self.depth

    @property
    def support(self) -> int:
        return len(_FILTERS[self.family]) - 1

    def __call__(self, u: np.ndarray) -> np.ndarray:
        """Linear interpolation of phi (left value for the piecewise-constant
        Haar); zero outside the support."""
        u = np.asarray(u, dtype=float)
        pos = u * (1 << self.depth)
        idx = np.floor(pos).astype(np.int64)
        frac = pos - idx
        last = len(self.values) - 1
        inside = (idx >= 0) & (idx < last)
        i0 = np.where(inside, idx, 0)
        if self.family == "haar":
            return np.where(inside, self.values[i0], 0.0)
        out = self.values[i0] * (1.0 - frac) + self.values[i0 + 1] * frac
        return np.where(inside, out, 0.0)


def _integer_values(h: np.ndarray) -> np.ndarray:
    """phi at the integers 0..N-1: the unit-eigenvalue eigenvector of the
    refinement matrix ``M[i, j] = sqrt(2) h[2i - j]``, normalized to sum 1."""
    n = len(h)
    m = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if 0 <= 2 * i - j < n:
                m[i, j] = np.sqrt(2.0) * h[2 * i - j]
    # phi vanishes at both ends of its support for filters longer than two taps
    inner = m[1:-1, 1:-1]
    w, v = np.linalg.eig(inner)
    vec = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    out = np.zeros(n)
    out[1:-1] = vec / vec.sum()
    return out


@lru_cache(maxsize=None)
def _cascade_values(family: str, depth: int) -> np.ndarray:
    h = _FILTERS[family]
    support = len(h) - 1
    if family == "haar":
        vals = np.zeros(support * (1 << depth) + 1)
        vals[:-1] = 1.0
        return vals
    vals = _integer_values(h)  # grid step 1
    for level in range(1, depth + 1):
        size = support * (1 << level) + 1
        new = np.zeros(size)
        new[::2] = vals
        # odd points: phi(x) = sqrt(2) sum_k h_k phi(2x - k), 2x - k on the old grid
        odd = np.arange(1, size, 2)
        acc = np.zeros(len(odd))
        old_len = len(vals)
        for k, hk in enumerate(h):
            # 2x - k on the old grid (step 2**-(level-1))
            src = odd - k * (1 << (level - 1))
            ok = (src >= 0) & (src < old_len)
            acc[ok] += hk * vals[src[ok]]
        new[1::2] = np.sqrt(2.0) * acc
        vals = new
    vals.setflags(write=False)
    return vals


def build_cascade(family: str, depth: int) -> CascadeTable:
    """Tabulate the father wavelet of ``family`` on a grid of step ``2**-depth``.

    Parameters
    ----------
    family : {"haar", "db6"}
    depth : int
        Refinement depth ``L`` in ``[4, 16]``.
    """
    if family not in _FILTERS:
        raise ValueError(f"unsupported wavelet family {family!r}")
    if not 4 <= int(depth) <= 16:
        raise ValueError("cascade depth must lie in [4, 16]")
    return CascadeTable(family, int(depth), _cascade_values(family, int(depth)))


@lru_cache(maxsize=None)
def cascade_table(family: str, depth: int = 12) -> CascadeTable:
    return build_cascade(family, depth)


@dataclass(frozen=True)
class DictionarySpec:
    """A per-coordinate basis family replicated over ``d`` coordinates.

    Parameters
    ----------
    family : {"haar", "db6", "cosine"}
    resolution : int
        Level ``l`` for wavelet families (``k' = 2**l``) or the block
        length ``k'`` for the cosine family.
    d : int
        Number of coordinates.
    drop_redundant : bool
        Every block spans the constant function, so concatenating ``d > 1``
        blocks gives a rank-deficient Gram matrix. When set, blocks after the
        first drop one column (the last wavelet shift, or the cosine
        constant), leaving ``k - d + 1`` linearly independent columns.
    depth : int
        Cascade depth used for wavelet lookups.
    """

    family: str
    resolution: int
    d: int = 1
    drop_redundant: bool = False
    depth: int = 12

    def __post_init__(self):
        if self.family not in ("haar", "db6", "cosine"):
            raise ValueError(f"unknown dictionary family {self.family!r}")
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.family == "cosine":
            if self.resolution < 1:
                raise ValueError("cosine block length must be >= 1")
        elif self.resolution < 0:
            raise ValueError("wavelet resolution must be nonnegative")

    @property
    def block_size(self) -> int:
        if self.family == "cosine":
            return int(self.resolution)
        return 1 << int(self.resolution)

    @property
    def k_nominal(self) -> int:
        return self.d * self.block_size

    @property
    def k(self) -> int:
        """Number of columns actually produced."""
        if self.drop_redundant:
            return self.k_nominal - (self.d - 1)
        return self.k_nominal

    def _kept_columns(self) -> np.ndarray:
        kp = self.block_size
        keep = np.ones(self.k_nominal, dtype=bool)
        if self.drop_redundant:
            for j in range(1, self.d):
                drop = j * kp if self.family == "cosine" else (j + 1) * kp - 1
                keep[drop] = False
        return keep


def _check_points(x: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, d) if d > 1 or x.size == 0 else x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"expected points with {d} coordinates, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("points must be finite")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("points must lie in [0, 1]^d")
    return x


def _wavelet_block_coo(t: np.ndarray, spec: DictionarySpec):
    """Rows, local columns and values of one periodized wavelet block."""
    table = cascade_table(spec.family, spec.depth)
    level = int(spec.resolution)
    kp = 1 << level
    scaled = t * kp
    base = np.floor(scaled)
    offsets = np.arange(table.support)
    shifts = base[:, None] - offsets[None, :]          # n x support
    u = scaled[:, None] - shifts                       # in [0, support)
    vals = table(u) * 2.0 ** (level / 2.0)
    cols = np.mod(shifts, kp).astype(np.int64)
    rows = np.broadcast_to(np.arange(len(t))[:, None], shifts.shape)
    return rows.ravel(), cols.ravel(), vals.ravel()


def basis_matrix(spec: DictionarySpec, x, sparse: bool = False):
    """Evaluate the dictionary at each row of ``x`` (``n x d``).

    Returns a dense ``n x k`` array, or CSR when ``sparse`` is true.
    Wavelet blocks have at most 11 nonzeros per row and coordinate.
    """
    x = _check_points(x, spec.d)
    n = x.shape[0]
    kp = spec.block_size
    keep = spec._kept_columns()
    if spec.family == "cosine":
        t = np.arange(1, kp)
        blocks = []
        for j in range(spec.d):
            blk = np.empty((n, kp))
            blk[:, 0] = 1.0
            blk[:, 1:] = np.sqrt(2.0) * np.cos(np.pi * np.outer(x[:, j], t))
            blocks.append(blk)
        dense = np.hstack(blocks) if blocks else np.zeros((n, 0))
        dense = dense[:, keep]
        return sp.csr_matrix(dense) if sparse else dense
    rows, cols, vals = [], [], []
    for j in range(spec.d):
        r, c, v = _wavelet_block_coo(x[:, j], spec)
        nz = v != 0.0
        rows.append(r[nz])
        cols.append(c[nz] + j * kp)
        vals.append(v[nz])
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, spec.k_nominal),
    ).tocsr()
    mat.sum_duplicates()
    if spec.drop_redundant and spec.d > 1:
        mat = mat[:, np.flatnonzero(keep)]
    mat.sort_indices()
    return mat if sparse else mat.toarray()


def evaluate_basis(spec: DictionarySpec, x) -> np.ndarray:
    """Dictionary vector at a single point ``x`` in ``[0, 1]^d``."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return basis_matrix(spec, x)[0]
