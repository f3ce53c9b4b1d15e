"""Filtered back-projection kernel estimator used as the comparison baseline.

For normalized observations ``(s_i, theta_i)`` the raw estimate at node ``b`` is

    f(b) = 1/(2 pi n h^2) sum_i K((b . theta_i - s_i)/h) / f_phi(phi_i)

where ``K`` is a ramp filter band-limited by a taper, and ``f_phi`` is a
kernel density estimate of the line angles that undoes the uneven angular
sampling. Negative values are cut off and the result renormalized.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError
from .geometry import normalize_observations
from .objective import DensityEstimate

log = logging.getLogger(__name__)

TAPERS = ("cosine", "quadratic")
ANGLE_FLOOR = 1e-3

_FFT_SIZE = 2**20
_FREQ_STEP = 1.0 / 2048
_TABLE_RANGE = 2000.0


def _taper(name, t):
    if name == "cosine":
        return np.cos(0.5 * np.pi * t)
    if name == "quadratic":
        return 1.0 - t * t
    raise ConfigurationError("taper", f"choose from {TAPERS}")


@lru_cache(maxsize=4)
def _filter_table(taper):
    # K(v) = (1/pi) int_0^1 t w(t) cos(t v) dt by a single FFT over a uniform frequency grid
    t = np.arange(_FFT_SIZE) * _FREQ_STEP
    integrand = np.where(t <= 1.0, t * _taper(taper, np.minimum(t, 1.0)), 0.0)
    spectrum = np.fft.rfft(integrand)
    dv = 2.0 * np.pi / (_FFT_SIZE * _FREQ_STEP)
    v = np.arange(spectrum.size) * dv
    keep = v <= _TABLE_RANGE
    values = spectrum.real[keep] * _FREQ_STEP / np.pi
    values.setflags(write=False)
    v = v[keep]
    v.setflags(write=False)
    return v, values


@lru_cache(maxsize=4)
def _table_slopes(taper):
    vals = _filter_table(taper)[1]
    slope = np.append(np.diff(vals), 0.0)
    slope.setflags(write=False)
    return slope


@dataclass(frozen=True)
class FilterKernel:
    """Ramp filter ``K`` with Fourier transform ``|t| w(t)`` on ``|t| <= 1``.

    ``K`` is tabulated once on ``[0, 2000]`` and evaluated by linear
    interpolation; it is even and vanishes beyond the table.
    """

    taper: str = "cosine"

    def __post_init__(self):
        if self.taper not in TAPERS:
            raise ConfigurationError("taper", f"choose from {TAPERS}")

    @property
    def table(self):
        return _filter_table(self.taper)

    def __call__(self, v):
        # the table is uniformly spaced from 0, so linear interpolation is index arithmetic
        grid, vals = self.table
        slope = _table_slopes(self.taper)
        u = np.abs(v) * (1.0 / grid[1])
        i = u.astype(np.intp)
        np.minimum(i, vals.size - 1, out=i)
        out = vals[i] + (u - i) * slope[i]
        out[u >= vals.size - 1] = 0.0
        return out


@dataclass(frozen=True)
class AngleDensity:
    """Gaussian KDE of line angles, wrapped with period pi.

    Angles are ``atan2(theta_2, theta_1)`` of the canonically oriented
    normals, so they lie in ``(-pi/2, pi/2]``.
    """

    angles: np.ndarray
    bandwidth: float = None
    floor: float = ANGLE_FLOOR
    _grid: np.ndarray = field(init=False, repr=False)
    _dens: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        phi = np.asarray(self.angles, dtype=float)
        object.__setattr__(self, "angles", phi)
        if phi.size == 0:
            raise ConfigurationError("observations", "need at least one observation")
        bw = self.bandwidth
        if bw is None:
            sd = phi.std(ddof=1) if phi.size > 1 else 0.0
            bw = 1.06 * sd * phi.size ** (-0.2)
            if not bw > 0:
                bw = 0.05
        object.__setattr__(self, "bandwidth", float(bw))
        # tabulate on a fine periodic grid, then interpolate
        g = np.linspace(-np.pi / 2, np.pi / 2, 1025)
        dens = np.zeros_like(g)
        for shift in (-np.pi, 0.0, np.pi):
            for chunk in np.array_split(phi, max(1, phi.size // 4096)):
                z = (g[:, None] - chunk[None, :] - shift) / bw
                dens += np.exp(-0.5 * z * z).sum(axis=1)
        dens /= phi.size * bw * np.sqrt(2.0 * np.pi)
        object.__setattr__(self, "_grid", g)
        object.__setattr__(self, "_dens", dens)

    @classmethod
    def from_normals(cls, theta, bandwidth=None):
        theta = np.asarray(theta, dtype=float)
        return cls(np.arctan2(theta[:, 1], theta[:, 0]), bandwidth)

    def __call__(self, phi):
        return np.interp(phi, self._grid, self._dens)

    def weights(self):
        """Inverse angle-density weights, with the density floored."""
        return 1.0 / np.maximum(self(self.angles), self.floor)


def _normalized(observations):
    if isinstance(observations, tuple) and len(observations) == 2:
        s, theta = observations
        return np.asarray(s, dtype=float), np.asarray(theta, dtype=float)
    if len(observations) == 0:
        raise ConfigurationError("observations", "need at least one observation")
    return normalize_observations(observations.y, observations.x)


def _truncate_normalize(raw, grid):
    f = np.maximum(raw, 0.0)
    mass = f.sum() * grid.cell_area
    if not mass > 0:
        log.warning("kernel estimate has no positive values; returning the uniform density")
        return np.full(grid.m, 1.0 / grid.area)
    return f / mass


class _BackProjector:
    """Back projection of filtered lines onto the grid nodes, reusable across bandwidths."""

    chunk = 4096

    def __init__(self, observations, grid, filt, angle_density):
        self.s, self.theta = _normalized(observations)
        self.grid = grid
        self.n = len(self.s)
        self.filt = filt if filt is not None else FilterKernel()
        ad = angle_density if angle_density is not None else AngleDensity.from_normals(self.theta)
        self.weights = ad.weights()
        self.nodes = grid.centers()

    def raw(self, h):
        out = np.zeros(self.grid.m)
        for lo in range(0, self.n, self.chunk):
            sl = slice(lo, lo + self.chunk)
            dist = self.nodes @ self.theta[sl].T - self.s[None, sl]
            out += self.filt(dist / h) @ self.weights[sl]
        return out / (2.0 * np.pi * self.n * h * h)

    def estimate(self, h):
        return DensityEstimate(_truncate_normalize(self.raw(h), self.grid), self.grid)


def kernel_estimate(observations, grid, h, filter=None, angle_density=None):
    """Back-projection estimate at bandwidth ``h``, cut at zero and renormalized.

    ``observations`` is a dataset (``y``, ``x`` attributes) or a pair
    ``(s, theta)`` of normalized offsets and unit normals.
    """
    if not (np.isfinite(h) and h > 0):
        raise ConfigurationError("bandwidth", f"must be positive, got {h!r}")
    return _BackProjector(observations, grid, filter, angle_density).estimate(h)


def raw_kernel_estimate(observations, grid, h, filter=None, angle_density=None):
    """The back projection before truncation and renormalization."""
    if not (np.isfinite(h) and h > 0):
        raise ConfigurationError("bandwidth", f"must be positive, got {h!r}")
    return _BackProjector(observations, grid, filter, angle_density).raw(h)


def default_h_grid(points=25, lo=0.05, hi=2.0):
    return np.geomspace(lo, hi, points)


def oracle_bandwidth(observations, grid, truth, h_grid=None, filter=None, angle_density=None):
    """Bandwidth with the smallest ISE against known ``truth`` node values.

    Returns ``(h_star, ise_per_h, estimate_at_h_star)``; ties go to the larger ``h``.
    """
    h_grid = default_h_grid() if h_grid is None else np.asarray(h_grid, dtype=float).reshape(-1)
    if h_grid.size == 0:
        raise ConfigurationError("h_grid", "must contain at least one bandwidth")
    if not (h_grid > 0).all():
        raise ConfigurationError("h_grid", "bandwidths must be positive")
    truth = np.asarray(truth, dtype=float)
    bp = _BackProjector(observations, grid, filter, angle_density)
    ises = np.empty(h_grid.size)
    for i, h in enumerate(h_grid):
        est = bp.estimate(h)
        ises[i] = np.sum((est.values - truth) ** 2) * grid.cell_area
    order = np.argsort(-h_grid, kind="stable")
    i_star = order[np.argmin(ises[order])]
    best = bp.estimate(h_grid[i_star])
    return float(h_grid[i_star]), ises, best
