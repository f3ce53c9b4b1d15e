"""Balancing-principle choice of the regularization parameter.

Estimates are computed on the geometric path ``alpha_1 = c_L ln(n)/sqrt(n)``,
``alpha_{i+1} = r alpha_i``. The selected index is the largest ``j`` whose
estimate stays within ``tau(i) = C * sigma_scale * r**((1 - i)/2)`` of every
less regularized estimate ``i < j``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .objective import quadratic_form

log = logging.getLogger(__name__)

DISTANCES = ("l2", "h1")


@dataclass(frozen=True)
class AlphaPath:
    n: int
    c_l: float = 1.0
    r: float = 1.5
    m_path: int = 12
    alphas: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ConfigurationError("n", "sample size must be an integer >= 2")
        if not self.c_l > 0:
            raise ConfigurationError("c_l", "must be positive")
        if not self.r > 1:
            raise ConfigurationError("r", "path ratio must exceed 1")
        if int(self.m_path) != self.m_path or self.m_path < 2:
            raise ConfigurationError("m_path", "path length must be an integer >= 2")
        a1 = self.c_l * np.log(self.n) / np.sqrt(self.n)
        object.__setattr__(self, "alphas", a1 * self.r ** np.arange(self.m_path))

    def thresholds(self, C, sigma_scale):
        """``tau(i)`` for 1-based ``i = 1..m_path``."""
        i = np.arange(1, self.m_path + 1)
        return C * sigma_scale * self.r ** ((1.0 - i) / 2.0)


def alpha_path(n, c_l=1.0, r=1.5, m_path=12):
    return AlphaPath(n, c_l, r, m_path)


@dataclass
class LepskiiResult:
    selected_index: int  # 1-based
    alphas: np.ndarray
    estimates: list
    pairwise_distances: np.ndarray
    thresholds: np.ndarray
    threshold_constant: float
    sigma_scale: float
    fallback: bool = False
    reports: list = None

    @property
    def alpha(self):
        return float(self.alphas[self.selected_index - 1])

    @property
    def estimate(self):
        return self.estimates[self.selected_index - 1]


def grid_norm(grid, v, kind="l2"):
    """Discrete L2 or H1 norm of node values ``v``."""
    if kind not in DISTANCES:
        raise ConfigurationError("distance", f"choose from {DISTANCES}")
    v = np.asarray(v, dtype=float)
    if kind == "l2":
        return float(np.sqrt(np.sum(v * v) * grid.cell_area))
    return float(np.sqrt(v @ (quadratic_form("h1", grid) @ v)))


def distance_matrix(estimates, grid, kind="l2"):
    vals = [np.asarray(getattr(e, "values", e)) for e in estimates]
    m = len(vals)
    d = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            d[i, j] = d[j, i] = grid_norm(grid, vals[i] - vals[j], kind)
    return d


def select_index(distances, thresholds):
    """Largest 1-based ``j`` with ``distances[i, j] <= thresholds[i]`` for all ``i < j``.

    Returns ``(j, fallback)`` where ``fallback`` flags that only ``j = 1`` qualified.
    """
    d = np.asarray(distances)
    tau = np.asarray(thresholds)
    m = len(tau)
    for j in range(m - 1, 0, -1):
        if np.all(d[:j, j] <= tau[:j]):
            return j + 1, False
    return 1, True


def _pilot_sigma(distances):
    # median spacing between neighbouring estimates on the path
    return float(np.median(np.diag(distances, 1)))


def select(path, solve_fn, grid, distance="l2", C=8.0, sigma_scale=None):
    """Run the path and apply the balancing rule.

    ``solve_fn(alpha, warm)`` returns ``(DensityEstimate, report)``; ``warm``
    is the previous (larger-alpha) solution vector or ``None``. Solves run
    from the largest alpha down so each one starts from a smoother neighbour.
    With ``sigma_scale=None`` the scale is calibrated from the path itself.
    """
    if distance not in DISTANCES:
        raise ConfigurationError("distance", f"choose from {DISTANCES}")
    if not C > 0:
        raise ConfigurationError("C", "must be positive")
    if sigma_scale is not None and not sigma_scale > 0:
        raise ConfigurationError("sigma_scale", "must be positive")
    m = path.m_path
    estimates = [None] * m
    reports = [None] * m
    warm = None
    for i in range(m - 1, -1, -1):
        est, rep = solve_fn(float(path.alphas[i]), warm)
        estimates[i], reports[i] = est, rep
        warm = est.values
    dist = distance_matrix(estimates, grid, distance)
    sigma = _pilot_sigma(dist) if sigma_scale is None else float(sigma_scale)
    if not sigma > 0:
        # every estimate coincides; any index is admissible
        sigma = np.finfo(float).tiny
    tau = path.thresholds(C, sigma)
    j, fallback = select_index(dist, tau)
    if fallback:
        log.info("balancing rule admitted no index beyond the first")
    return LepskiiResult(
        selected_index=j,
        alphas=path.alphas.copy(),
        estimates=estimates,
        pairwise_distances=dist,
        thresholds=tau,
        threshold_constant=float(C),
        sigma_scale=sigma,
        fallback=fallback,
        reports=reports,
    )
