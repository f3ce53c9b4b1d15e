"""Estimation grid and the discretized line-integral operator.

Every observation ``(y, x)`` of the random coefficients model defines the
line ``{b : b . theta = s}`` with ``theta = x/|x|`` and ``s = y/|x|``. The
conditional density of ``y`` given ``x`` is the integral of the coefficient
density over that line. Discretizing the density as piecewise constant on
grid cells turns each line integral into ``sum_j A[i, j] f_j`` where
``A[i, j]`` is the length of line ``i`` inside cell ``j``.

Lengths are computed exactly by parametric cell stepping: the line is
clipped to the grid rectangle and split at every crossing with a grid
line, the same scheme used by Siddon's ray tracer.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DegenerateObservationError, EmptyOperatorError

GRAZING_FRACTION = 1e-12
_CHUNK = 20000


@dataclass(frozen=True)
class Grid2D:
    """Rectangle ``[lo, hi]`` tiled by ``k[0] x k[1]`` equal cells.

    Nodes are cell centers ordered row-major with axis 0 fastest, so node
    ``j`` has indices ``(j % k0, j // k0)``.
    """

    lo: tuple
    hi: tuple
    k: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        k = tuple(self.k)
        if len(lo) != 2 or not all(np.isfinite(lo)):
            raise ConfigurationError("lo", f"expected two finite reals, got {self.lo!r}")
        if len(hi) != 2 or not all(np.isfinite(hi)):
            raise ConfigurationError("hi", f"expected two finite reals, got {self.hi!r}")
        if len(k) != 2:
            raise ConfigurationError("k", f"expected two cell counts, got {self.k!r}")
        for a in range(2):
            if not lo[a] < hi[a]:
                raise ConfigurationError("lo", f"lo[{a}]={lo[a]} must be below hi[{a}]={hi[a]}")
            if int(k[a]) != k[a] or k[a] < 2:
                raise ConfigurationError("k", f"k[{a}]={k[a]} must be an integer >= 2")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "k", (int(k[0]), int(k[1])))

    @property
    def spacing(self):
        return tuple((self.hi[a] - self.lo[a]) / self.k[a] for a in range(2))

    @property
    def cell_area(self):
        d0, d1 = self.spacing
        return d0 * d1

    @property
    def m(self):
        return self.k[0] * self.k[1]

    @property
    def area(self):
        return (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])

    @property
    def diameter(self):
        return float(np.hypot(self.hi[0] - self.lo[0], self.hi[1] - self.lo[1]))

    def axis_centers(self, a):
        # convex-combination form keeps centers of symmetric grids exactly antisymmetric
        k = self.k[a]
        i = np.arange(k) + 0.5
        return ((k - i) * self.lo[a] + i * self.hi[a]) / k

    def centers(self):
        """Node coordinates as an ``(m, 2)`` array."""
        c0, c1 = np.meshgrid(self.axis_centers(0), self.axis_centers(1), indexing="xy")
        return np.column_stack([c0.ravel(), c1.ravel()])

    def to_image(self, values):
        """Reshape node values to ``(k1, k0)``; row index follows axis 1."""
        return np.asarray(values).reshape(self.k[1], self.k[0])

    def shifted(self, delta):
        return Grid2D(
            (self.lo[0] + delta[0], self.lo[1] + delta[1]),
            (self.hi[0] + delta[0], self.hi[1] + delta[1]),
            self.k,
        )


def build_grid(lo, hi, k):
    return Grid2D(tuple(lo), tuple(hi), tuple(k))


@dataclass(frozen=True)
class Line2D:
    """The line ``{b : b . normal = offset}`` with a canonically oriented unit normal."""

    normal: tuple
    offset: float

    def __post_init__(self):
        theta, s = _canonical(np.asarray(self.normal, dtype=float), float(self.offset))
        object.__setattr__(self, "normal", (float(theta[0]), float(theta[1])))
        object.__setattr__(self, "offset", float(s))


def _canonical(theta, s):
    nrm = np.hypot(theta[0], theta[1])
    if not nrm > 0:
        raise DegenerateObservationError("line normal has zero length")
    theta = theta / nrm
    s = s / nrm
    if theta[0] < 0 or (theta[0] == 0 and theta[1] < 0):
        theta, s = -theta, -s
    return theta + 0.0, s + 0.0  # drop negative zeros


def normalize_observations(y, x):
    """Vectorized ``(y, x) -> (s, theta)`` with canonical orientation.

    Returns ``s`` of shape ``(n,)`` and ``theta`` of shape ``(n, 2)``.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(len(y), -1)
    if x.shape[1] != 2:
        raise ConfigurationError("x", f"expected 2 regressor components, got {x.shape[1]}")
    nrm = np.hypot(x[:, 0], x[:, 1])
    bad = np.flatnonzero(~(nrm > 0))
    if bad.size:
        raise DegenerateObservationError(f"observation {bad[0]} has a zero regressor vector")
    theta = x / nrm[:, None]
    s = y / nrm
    flip = (theta[:, 0] < 0) | ((theta[:, 0] == 0) & (theta[:, 1] < 0))
    theta[flip] *= -1.0
    s[flip] *= -1.0
    return s + 0.0, theta + 0.0


def line_from_observation(y, x):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != 2:
        raise ConfigurationError("x", f"expected 2 regressor components, got {x.size}")
    if not np.hypot(x[0], x[1]) > 0:
        raise DegenerateObservationError("regressor vector has zero norm")
    return Line2D(tuple(x), float(y))


def _trace_chunk(grid, s, theta):
    """Intersection lengths for a batch of lines.

    Returns ``(rows, cols, lengths)`` triplets with ``rows`` local to the batch.
    """
    n = len(s)
    lo = np.asarray(grid.lo)
    hi = np.asarray(grid.hi)
    delta = np.asarray(grid.spacing)
    k = np.asarray(grid.k)

    p0 = theta * s[:, None]
    d = np.column_stack([-theta[:, 1], theta[:, 0]])

    t_enter = np.full(n, -np.inf)
    t_exit = np.full(n, np.inf)
    inside = np.ones(n, dtype=bool)
    planes = []
    for a in range(2):
        da = d[:, a]
        moving = da != 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = (lo[a] - p0[:, a]) / da
            t_hi = (hi[a] - p0[:, a]) / da
        t_min = np.where(moving, np.minimum(t_lo, t_hi), -np.inf)
        t_max = np.where(moving, np.maximum(t_lo, t_hi), np.inf)
        # a line parallel to this axis must lie within the slab
        inside &= moving | ((p0[:, a] >= lo[a]) & (p0[:, a] <= hi[a]))
        t_enter = np.maximum(t_enter, t_min)
        t_exit = np.minimum(t_exit, t_max)
        edges = lo[a] + np.arange(k[a] + 1) * delta[a]
        with np.errstate(divide="ignore", invalid="ignore"):
            tp = (edges[None, :] - p0[:, a : a + 1]) / da[:, None]
        tp[~moving] = np.inf
        planes.append(tp)

    hit = inside & (t_exit > t_enter)
    if not hit.any():
        empty = np.zeros(0)
        return empty.astype(np.int64), empty.astype(np.int64), empty

    idx = np.flatnonzero(hit)
    te = t_enter[idx, None]
    tx = t_exit[idx, None]
    t = np.concatenate([te, tx] + [np.clip(tp[idx], te, tx) for tp in planes], axis=1)
    t.sort(axis=1)
    seg = np.diff(t, axis=1)
    mid = 0.5 * (t[:, 1:] + t[:, :-1])

    cells = np.zeros(seg.shape, dtype=np.int64)
    stride = 1
    for a in range(2):
        pos = p0[idx, a : a + 1] + mid * d[idx, a : a + 1]
        ia = np.floor((pos - lo[a]) / delta[a]).astype(np.int64)
        np.clip(ia, 0, k[a] - 1, out=ia)
        cells += ia * stride
        stride *= k[a]

    keep = seg > GRAZING_FRACTION * delta.min()
    rows = np.broadcast_to(idx[:, None], seg.shape)[keep]
    return rows, cells[keep], seg[keep]


def trace_line(grid, line):
    """Cells crossed by ``line`` and the length of the line inside each.

    Returns ``(indices, lengths)``, both empty when the line misses the grid.
    """
    s = np.array([line.offset])
    theta = np.array([line.normal])
    _, cols, lengths = _trace_chunk(grid, s, theta)
    order = np.argsort(cols, kind="stable")
    cols, lengths = cols[order], lengths[order]
    # abutting segments in one cell (a line along a cell edge) merge into one entry
    uniq, inv = np.unique(cols, return_inverse=True)
    return uniq, np.bincount(inv, weights=lengths, minlength=len(uniq))


@dataclass(frozen=True)
class LineOperator:
    """Sparse ``(n_retained, m)`` matrix of line-in-cell lengths.

    ``retained`` holds, for each row, the index of the input observation
    it came from; lines that miss the grid are dropped and counted.
    """

    matrix: sp.csr_matrix
    grid: Grid2D
    retained: np.ndarray
    dropped_count: int
    matrix_t: sp.csr_matrix = field(repr=False, default=None)

    def __post_init__(self):
        if self.matrix_t is None:
            object.__setattr__(self, "matrix_t", self.matrix.T.tocsr())

    @property
    def n_retained(self):
        return self.matrix.shape[0]

    @property
    def shape(self):
        return self.matrix.shape

    def row(self, i):
        lo, hi = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return self.matrix.indices[lo:hi].copy(), self.matrix.data[lo:hi].copy()

    @property
    def rows(self):
        return [self.row(i) for i in range(self.n_retained)]

    def row_sums(self):
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def dot(self, f):
        return self.matrix @ f

    def rdot(self, w):
        return self.matrix_t @ w


def operator_from_normalized(grid, s, theta):
    s = np.asarray(s, dtype=float).reshape(-1)
    theta = np.asarray(theta, dtype=float).reshape(len(s), 2)
    n = len(s)
    if n == 0:
        raise ConfigurationError("observations", "need at least one observation")
    rows, cols, vals = [], [], []
    for start in range(0, n, _CHUNK):
        r, c, v = _trace_chunk(grid, s[start : start + _CHUNK], theta[start : start + _CHUNK])
        rows.append(r + start)
        cols.append(c)
        vals.append(v)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    retained = np.unique(rows)
    if retained.size == 0:
        raise EmptyOperatorError(f"none of the {n} observation lines intersects the grid")
    compact = np.searchsorted(retained, rows)
    mat = sp.coo_matrix((vals, (compact, cols)), shape=(retained.size, grid.m)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return LineOperator(mat, grid, retained, int(n - retained.size))


def build_operator(grid, observations):
    """Assemble the line operator for ``observations``.

    ``observations`` is either a :class:`~rc_rmle.model.Dataset` (anything
    with array attributes ``y`` and ``x``) or an iterable of ``(y, x)`` pairs.
    """
    if hasattr(observations, "y") and hasattr(observations, "x"):
        y, x = observations.y, observations.x
    else:
        pairs = list(observations)
        if not pairs:
            raise ConfigurationError("observations", "need at least one observation")
        y = np.array([p[0] for p in pairs], dtype=float)
        x = np.array([np.asarray(p[1], dtype=float) for p in pairs])
    if len(y) == 0:
        raise ConfigurationError("observations", "need at least one observation")
    s, theta = normalize_observations(y, x)
    return operator_from_normalized(grid, s, theta)
