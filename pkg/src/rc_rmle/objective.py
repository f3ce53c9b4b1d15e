"""Penalized negative average log-likelihood on a discretized density.

All functionals act on the vector ``f`` of cell values (density units) and
are scaled by the cell area so they approximate their continuum versions.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError

EPS_LOG = 1e-12
KINDS = ("l2", "h1", "h2", "entropy")
_ALIASES = {
    "L2": "l2",
    "SobolevH1": "h1",
    "SobolevH2": "h2",
    "Entropy": "entropy",
}


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str = "l2"
    alpha: float = 0.0

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ConfigurationError("kind", f"unknown regularizer {self.kind!r}; choose from {KINDS}")
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ConfigurationError("alpha", f"must be a nonnegative real, got {self.alpha!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "alpha", float(self.alpha))

    def with_alpha(self, alpha):
        return RegularizerSpec(self.kind, alpha)


@dataclass(frozen=True)
class DensityEstimate:
    """Nonnegative cell values with unit discrete integral."""

    values: np.ndarray
    grid: object

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.m,):
            raise ValueError(f"expected {self.grid.m} values, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def integral(self):
        return float(self.values.sum() * self.grid.cell_area)

    def check(self, tol=1e-8):
        """Raise if the nonnegativity or unit-mass invariant is violated."""
        if (self.values < 0).any():
            raise ValueError(f"negative value {self.values.min():g}")
        if abs(self.integral - 1.0) > tol:
            raise ValueError(f"discrete integral {self.integral!r} differs from 1")
        return self

    def peak(self):
        j = int(np.argmax(self.values))
        return j, self.grid.centers()[j]


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    nll: float
    penalty: float
    gradient: np.ndarray
    clamped: int = 0


def neg_avg_loglik(op, f):
    """``-(1/n) sum_i log(a_i . f)`` and its gradient.

    Line integrals below ``EPS_LOG`` are clamped; the third return value
    counts them.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (op.shape[1],):
        raise ValueError(f"f has shape {f.shape}, operator has {op.shape[1]} columns")
    return _nll_from_integrals(op, op.dot(f))


def _nll_from_integrals(op, li):
    n = li.size
    lo = li < EPS_LOG
    c = np.where(lo, EPS_LOG, li)
    value = -np.log(c).sum() / n
    grad = -op.rdot(1.0 / c) / n
    return value, grad, int(lo.sum())


def _diff1(k):
    # (k+1, k): zero-padded forward differences, both boundaries included
    return sp.diags([np.ones(k), -np.ones(k)], [0, -1], shape=(k + 1, k), format="csr")


def _diff2(k):
    return sp.diags([np.ones(k - 1), -2 * np.ones(k), np.ones(k - 1)], [-1, 0, 1], shape=(k, k), format="csr")


@lru_cache(maxsize=32)
def quadratic_form(kind, grid):
    """Sparse ``Q`` with ``R(f) = f' Q f`` for the quadratic penalties."""
    k0, k1 = grid.k
    d0, d1 = grid.spacing
    db = grid.cell_area
    i0, i1 = sp.identity(k0, format="csr"), sp.identity(k1, format="csr")
    q = sp.identity(grid.m, format="csr")
    if kind in ("h1", "h2"):
        g0 = sp.kron(i1, _diff1(k0)) / d0
        g1 = sp.kron(_diff1(k1), i0) / d1
        q = q + g0.T @ g0 + g1.T @ g1
    if kind == "h2":
        h0 = sp.kron(i1, _diff2(k0)) / d0**2
        h1 = sp.kron(_diff2(k1), i0) / d1**2
        q = q + h0.T @ h0 + h1.T @ h1
    if kind not in ("l2", "h1", "h2"):
        raise ConfigurationError("kind", f"{kind!r} is not a quadratic penalty")
    return (q * db).tocsr()


def sobolev_terms(grid, f):
    """Individual squared-norm pieces of the H1 penalty (for diagnostics and tests)."""
    k0, k1 = grid.k
    d0, d1 = grid.spacing
    img = grid.to_image(f)
    pad = np.pad(img, 1)
    dx = np.diff(pad[1:-1, :], axis=1) / d0
    dy = np.diff(pad[:, 1:-1], axis=0) / d1
    db = grid.cell_area
    return {
        "l2": float((img**2).sum() * db),
        "diff0": float((dx**2).sum() * db),
        "diff1": float((dy**2).sum() * db),
    }


def regularizer(spec, grid, f):
    """Penalty value and gradient (``alpha`` is not applied)."""
    f = np.asarray(f, dtype=float)
    db = grid.cell_area
    if spec.kind == "entropy":
        pos = f > 0
        val = float(np.sum(f[pos] * np.log(f[pos])) * db)
        grad = (1.0 + np.log(np.maximum(f, EPS_LOG))) * db
        return val, grad
    q = quadratic_form(spec.kind, grid)
    qf = q @ f
    return float(f @ qf), 2.0 * qf


def objective(op, spec, f):
    nll, g_nll, clamped = neg_avg_loglik(op, f)
    pen, g_pen = regularizer(spec, op.grid, f)
    if spec.alpha == 0.0:
        return ObjectiveValue(nll, nll, pen, g_nll, clamped)
    return ObjectiveValue(nll + spec.alpha * pen, nll, pen, g_nll + spec.alpha * g_pen, clamped)


def entropy_bregman(p, q, cell_area):
    """Generalized Kullback-Leibler divergence, the Bregman distance of the entropy."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(np.sum(p * np.log(p / q) - p + q) * cell_area)
