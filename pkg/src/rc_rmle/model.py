"""Observations, simulation scenarios and the true coefficient density."""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Observation:
    y: float
    x: np.ndarray


@dataclass(frozen=True)
class Dataset:
    """``n`` observations stored column-wise.

    ``x`` already contains the leading constant for intercept models.
    ``beta`` holds the latent coefficients for simulated data and is
    ``None`` otherwise.
    """

    y: np.ndarray
    x: np.ndarray
    beta: np.ndarray = None
    skipped_rows: tuple = ()

    def __len__(self):
        return len(self.y)

    def __iter__(self):
        for yi, xi in zip(self.y, self.x):
            yield Observation(float(yi), xi)

    def __getitem__(self, i):
        return Observation(float(self.y[i]), self.x[i])


@dataclass(frozen=True)
class MixtureTruth:
    """Equal-weight mixture of two bivariate normals with identity covariance."""

    weights: tuple = (0.5, 0.5)
    means: tuple = ((-1.5, -1.5), (1.5, 1.5))
    cov: tuple = ((1.0, 0.0), (0.0, 1.0))

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if not np.isclose(w.sum(), 1.0, atol=1e-12) or (w < 0).any():
            raise ConfigurationError("weights", "must be nonnegative and sum to 1")
        c = np.asarray(self.cov, dtype=float)
        if c.shape != (2, 2) or not np.allclose(c, c.T) or np.linalg.eigvalsh(c).min() <= 0:
            raise ConfigurationError("cov", "must be a symmetric positive definite 2x2 matrix")

    def pdf(self, b):
        b = np.atleast_2d(np.asarray(b, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        prec = np.linalg.inv(cov)
        norm = 1.0 / (2.0 * math.pi * math.sqrt(np.linalg.det(cov)))
        out = np.zeros(len(b))
        for w, mu in zip(self.weights, self.means):
            z = b - np.asarray(mu)
            out += w * norm * np.exp(-0.5 * np.einsum("ij,jk,ik->i", z, prec, z))
        return out

    def sample(self, n, rng):
        labels = rng.choice(len(self.weights), size=n, p=np.asarray(self.weights))
        chol = np.linalg.cholesky(np.asarray(self.cov, dtype=float))
        z = rng.standard_normal((n, 2)) @ chol.T
        return np.asarray(self.means, dtype=float)[labels] + z


@dataclass(frozen=True)
class Scenario:
    """Intercept model ``y = b0 + b1 x1`` with a normal or uniform design."""

    design: str
    truth: MixtureTruth = field(default_factory=MixtureTruth)
    half_width: float = 0.8

    def __post_init__(self):
        if self.design not in ("unbounded", "bounded"):
            raise ConfigurationError("design", f"unknown design {self.design!r}")
        if self.design == "bounded" and not 0 < self.half_width < 1:
            raise ConfigurationError("half_width", "bounded design support must lie inside (-1, 1)")

    def draw_design(self, n, rng):
        if self.design == "unbounded":
            return rng.standard_normal(n)
        return rng.uniform(-self.half_width, self.half_width, n)


SCENARIOS = {
    "unbounded": Scenario("unbounded"),
    "bounded": Scenario("bounded"),
}


def seed_sequence(seed):
    """``SeedSequence`` from an int or a tuple of ints such as ``(seed, n, run)``."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, (tuple, list)):
        return np.random.SeedSequence([int(v) for v in seed])
    return np.random.SeedSequence(int(seed))


def generate(scenario, n, seed):
    """Draw ``n`` observations; coefficients and design use separate streams."""
    if n < 1:
        raise ConfigurationError("n", "must be a positive integer")
    coef_ss, design_ss = seed_sequence(seed).spawn(2)
    beta = scenario.truth.sample(n, np.random.default_rng(coef_ss))
    x1 = scenario.draw_design(n, np.random.default_rng(design_ss))
    y = beta[:, 0] + beta[:, 1] * x1
    x = np.column_stack([np.ones(n), x1])
    return Dataset(y=y, x=x, beta=beta)


def true_density(truth, grid):
    """Mixture pdf at the grid's cell centers (not renormalized to the window)."""
    return truth.pdf(grid.centers())


def load_csv(path, response, regressors, intercept):
    """Read observations from a headered CSV file.

    Rows with missing or non-numeric fields are skipped and reported. With
    ``intercept`` a constant 1 is prepended so that ``x = (1, x1)``.
    """
    regressors = list(regressors)
    n_reg = len(regressors) + (1 if intercept else 0)
    if n_reg != 2:
        raise ConfigurationError(
            "regressors",
            f"the model needs exactly 2 coefficients, got {len(regressors)} regressors"
            f" {'with' if intercept else 'without'} intercept",
        )
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        cols = []
        for name in [response] + regressors:
            if name not in header:
                raise ConfigurationError("schema", f"column {name!r} not found in {path}")
            cols.append(header.index(name))
        ys, xs, bad = [], [], []
        # row numbers count data rows from 1, header excluded
        for rowno, row in enumerate(reader, start=1):
            try:
                vals = [float(row[c]) for c in cols]
            except (IndexError, ValueError):
                bad.append(rowno)
                continue
            if not all(math.isfinite(v) for v in vals):
                bad.append(rowno)
                continue
            xrow = ([1.0] if intercept else []) + vals[1:]
            if xrow[0] == 0.0 and xrow[1] == 0.0:
                bad.append(rowno)
                continue
            ys.append(vals[0])
            xs.append(xrow)
    if bad:
        shown = ", ".join(map(str, bad[:20])) + (", ..." if len(bad) > 20 else "")
        log.warning("skipped %d invalid row(s) in %s: %s", len(bad), path, shown)
    if not ys:
        raise DataError(f"no valid rows in {path}")
    return Dataset(y=np.array(ys), x=np.array(xs), skipped_rows=tuple(bad))
