"""High-level fits shared by the simulation harness and the CLI."""

from dataclasses import asdict, dataclass, field

import numpy as np

from .lepskii import alpha_path, select
from .objective import RegularizerSpec
from .solver import SolveOptions, solve


@dataclass(frozen=True)
class RMLEOptions:
    """Regularizer and balancing-rule settings for the likelihood estimator."""

    regularizer: str = "l2"
    c_l: float = 1.0
    r: float = 1.5
    m_path: int = 12
    C: float = 8.0
    sigma_scale: float = None
    distance: str = "l2"
    max_iters: int = 2000
    tol_rel_obj: float = 1e-9
    tol_kkt: float = 1e-6

    def solve_options(self, initial=None):
        return SolveOptions(
            max_iters=self.max_iters,
            tol_rel_obj=self.tol_rel_obj,
            tol_kkt=self.tol_kkt,
            initial=initial,
        )

    def to_dict(self):
        return asdict(self)


@dataclass
class RMLEFit:
    estimate: object
    alpha: float
    lepskii: object = None
    reports: list = field(default_factory=list)

    @property
    def converged(self):
        return all(r.converged for r in self.reports)

    def diagnostics(self):
        reps = self.reports
        out = {
            "alpha": self.alpha,
            "solves": len(reps),
            "converged": self.converged,
            "iterations": int(sum(r.iterations for r in reps)),
            "max_final_kkt": float(max(r.final_kkt for r in reps)),
            "clamp_count": int(max(r.clamp_count for r in reps)),
        }
        if self.lepskii is not None:
            out["selected_index"] = int(self.lepskii.selected_index)
            out["sigma_scale"] = float(self.lepskii.sigma_scale)
            out["fallback"] = bool(self.lepskii.fallback)
        return out


def fit_rmle(op, options=None, alpha=None):
    """Fit at a fixed ``alpha`` or, when ``alpha`` is None, by the balancing rule."""
    options = RMLEOptions() if options is None else options
    base = RegularizerSpec(options.regularizer, 0.0)
    if alpha is not None:
        est, rep = solve(op, base.with_alpha(alpha), op.grid, options.solve_options())
        return RMLEFit(est, float(alpha), None, [rep])

    def solve_fn(a, warm):
        return solve(op, base.with_alpha(a), op.grid, options.solve_options(warm))

    path = alpha_path(op.n_retained, options.c_l, options.r, options.m_path)
    res = select(path, solve_fn, op.grid, options.distance, options.C, options.sigma_scale)
    return RMLEFit(res.estimate, res.alpha, res, [r for r in res.reports])


def ise(estimate, truth, grid):
    """Integrated squared error ``sum_j (f_j - truth_j)^2 * cell_area``."""
    values = np.asarray(getattr(estimate, "values", estimate), dtype=float)
    truth = np.asarray(truth, dtype=float)
    est_grid = getattr(estimate, "grid", grid)
    if est_grid != grid or values.shape != (grid.m,) or truth.shape != (grid.m,):
        raise ValueError("estimate, truth and grid do not match")
    return float(np.sum((values - truth) ** 2) * grid.cell_area)
