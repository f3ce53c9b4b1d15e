"""Minimization of the penalized likelihood over the discrete density simplex.

The feasible set is ``{f >= 0, sum_j f_j * cell_area = 1}``. Two first-order
methods are provided:

``projected-gradient``
    Euclidean projection of a gradient step, with Barzilai-Borwein trial
    steps and monotone Armijo backtracking along the projected direction.
``mirror-descent``
    Exponentiated-gradient updates with exact renormalization. Iterates
    stay strictly positive, which the entropy penalty requires.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EmptyOperatorError
from .objective import EPS_LOG, DensityEstimate, objective, quadratic_form

ALGORITHMS = ("projected-gradient", "mirror-descent")

_ARMIJO = 1e-4
_STALL_WINDOW = 10
_STEP_MIN, _STEP_MAX = 1e-12, 1e12


@dataclass(frozen=True)
class SolveOptions:
    max_iters: int = 2000
    tol_rel_obj: float = 1e-9
    tol_kkt: float = 1e-6
    initial: np.ndarray = None
    algorithm: str = None  # None picks mirror descent for entropy, projected gradient otherwise

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigurationError("max_iters", "must be a positive integer")
        if not self.tol_rel_obj > 0:
            raise ConfigurationError("tol_rel_obj", "must be positive")
        if not self.tol_kkt > 0:
            raise ConfigurationError("tol_kkt", "must be positive")
        if self.algorithm is not None and self.algorithm not in ALGORITHMS:
            raise ConfigurationError("algorithm", f"choose from {ALGORITHMS}")

    def replace(self, **kw):
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return SolveOptions(**d)


@dataclass
class SolveReport:
    iterations: int
    objective_trace: np.ndarray
    final_kkt: float
    clamp_count: int
    converged: bool
    wall_time: float
    algorithm: str = ""
    final: object = field(default=None, repr=False)

    def summary(self):
        return {
            "algorithm": self.algorithm,
            "iterations": int(self.iterations),
            "objective": float(self.objective_trace[-1]),
            "final_kkt": float(self.final_kkt),
            "clamp_count": int(self.clamp_count),
            "converged": bool(self.converged),
        }


def _cell_area(grid):
    return grid if np.isscalar(grid) else grid.cell_area


def project_simplex(v, grid):
    """Euclidean projection of ``v`` onto ``{f >= 0, sum(f) * cell_area = 1}``.

    ``grid`` may be a :class:`~rc_rmle.geometry.Grid2D` or the cell area itself.
    """
    v = np.asarray(v, dtype=float)
    z = 1.0 / _cell_area(grid)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - z
    j = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / j > 0)[-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0)


def kkt_residual(op, spec, grid, f):
    """``max |f - P(f - grad F(f))|``; zero exactly at minimizers."""
    g = objective(op, spec, f).gradient
    return float(np.max(np.abs(f - project_simplex(f - g, grid))))


class _Problem:
    """Objective evaluations that reuse line integrals ``A f`` across a line search."""

    def __init__(self, op, spec):
        self.op = op
        self.spec = spec
        self.alpha = spec.alpha
        self.n = op.n_retained
        self.db = op.grid.cell_area
        self.q = quadratic_form(spec.kind, op.grid) if spec.kind != "entropy" else None

    def penalty(self, f):
        if self.q is not None:
            return float(f @ (self.q @ f))
        pos = f > 0
        return float(np.sum(f[pos] * np.log(f[pos])) * self.db)

    def penalty_grad(self, f):
        if self.q is not None:
            return 2.0 * (self.q @ f)
        return (1.0 + np.log(np.maximum(f, EPS_LOG))) * self.db

    def value(self, li, f):
        nll = -np.log(np.maximum(li, EPS_LOG)).sum() / self.n
        if self.alpha == 0.0:
            return nll
        return nll + self.alpha * self.penalty(f)

    def grad(self, li, f):
        g = -self.op.rdot(1.0 / np.maximum(li, EPS_LOG)) / self.n
        if self.alpha != 0.0:
            g = g + self.alpha * self.penalty_grad(f)
        return g

    def curvature(self, f, iters=20):
        """Power-iteration estimate of the largest Hessian eigenvalue at ``f``."""
        li = np.maximum(self.op.dot(f), EPS_LOG)
        w = 1.0 / (self.n * li**2)
        rng = np.random.default_rng(0)
        v = rng.random(f.size) + 0.5
        lam = 0.0
        for _ in range(iters):
            v /= np.linalg.norm(v)
            hv = self.op.rdot(w * self.op.dot(v))
            if self.alpha != 0.0:
                if self.q is not None:
                    hv = hv + 2.0 * self.alpha * (self.q @ v)
                else:
                    hv = hv + self.alpha * self.db * v / np.maximum(f, EPS_LOG)
            lam = float(np.linalg.norm(hv))
            v = hv
        return max(lam, 1e-12)


def _stalled(trace, tol):
    if len(trace) <= _STALL_WINDOW:
        return False
    old, new = trace[-1 - _STALL_WINDOW], trace[-1]
    return (old - new) <= tol * max(abs(new), 1.0)


def _projected_gradient(prob, f, opts, grid):
    li = prob.op.dot(f)
    F = prob.value(li, f)
    g = prob.grad(li, f)
    trace = [F]
    step = 1.0 / prob.curvature(f)
    kkt = np.inf
    it = 0
    converged = False
    for it in range(1, opts.max_iters + 1):
        d = project_simplex(f - step * g, grid) - f
        gd = float(g @ d)
        if gd >= 0.0:
            # the projected step is not a descent direction at this precision
            kkt = float(np.max(np.abs(f - project_simplex(f - g, grid))))
            converged = kkt <= opts.tol_kkt
            it -= 1
            break
        ad = prob.op.dot(d)
        lam = 1.0
        while True:
            f_new = f + lam * d
            li_new = li + lam * ad
            F_new = prob.value(li_new, f_new)
            if F_new <= F + _ARMIJO * lam * gd:
                break
            # safeguarded quadratic interpolation
            denom = 2.0 * (F_new - F - lam * gd)
            lam_q = -gd * lam * lam / denom if denom > 0 else 0.5 * lam
            lam = min(max(lam_q, 0.1 * lam), 0.5 * lam)
            if lam < 1e-16:
                f_new, li_new, F_new = f, li, F
                break
        # recompute to avoid drift from the incremental update
        li_new = prob.op.dot(f_new)
        F_new = prob.value(li_new, f_new)
        if F_new > F:
            f_new, li_new, F_new = f, li, F
        g_new = prob.grad(li_new, f_new)
        s = f_new - f
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 0:
            step = float(np.clip((s @ s) / sy, _STEP_MIN, _STEP_MAX))
        else:
            step = min(step * 4.0, _STEP_MAX) if lam == 1.0 else step
        moved = F_new < F
        f, li, F, g = f_new, li_new, F_new, g_new
        trace.append(F)
        kkt = float(np.max(np.abs(f - project_simplex(f - g, grid))))
        if kkt <= opts.tol_kkt and (_stalled(trace, opts.tol_rel_obj) or not moved):
            converged = True
            break
        if not moved and lam < 1e-16:
            break
    return f, np.asarray(trace), kkt, converged, it


def _mirror_descent(prob, f, opts, grid):
    db = _cell_area(grid)
    if (f <= 0).any():
        f = np.maximum(f, 1e-10 * f.max())
        f = f / (f.sum() * db)
    li = prob.op.dot(f)
    F = prob.value(li, f)
    g = prob.grad(li, f)
    trace = [F]
    eta = 1.0 / (prob.curvature(f) * f.max())
    kkt = np.inf
    it = 0
    converged = False
    logf = np.log(f)
    for it in range(1, opts.max_iters + 1):
        while True:
            u = logf - eta * (g - g.min())
            u -= u.max()
            f_new = np.exp(u)
            f_new /= f_new.sum() * db
            li_new = prob.op.dot(f_new)
            F_new = prob.value(li_new, f_new)
            if F_new <= F + _ARMIJO * float(g @ (f_new - f)):
                break
            eta *= 0.5
            if eta < 1e-300:
                f_new, li_new, F_new = f, li, F
                break
        g_new = prob.grad(li_new, f_new)
        moved = F_new < F
        if moved:
            # Barzilai-Borwein step in the dual (log) coordinates
            s = np.log(f_new) - logf
            yv = g_new - g
            sy = float(s @ yv)
            eta = float(np.clip((s @ s) / sy, _STEP_MIN, _STEP_MAX)) if sy > 0 else eta * 2.0
        f, li, F, g = f_new, li_new, F_new, g_new
        logf = np.log(f)
        trace.append(F)
        kkt = float(np.max(np.abs(f - project_simplex(f - g, grid))))
        if kkt <= opts.tol_kkt and (_stalled(trace, opts.tol_rel_obj) or not moved):
            converged = True
            break
        if not moved:
            break
    return f, np.asarray(trace), kkt, converged, it


def solve(op, spec, grid=None, opts=None):
    """Minimize ``nll(f) + alpha * R(f)`` over the density simplex.

    Never raises on non-convergence: the best iterate is returned with
    ``report.converged`` set to False.
    """
    if op is None or op.n_retained == 0:
        raise EmptyOperatorError("cannot estimate from an empty operator")
    grid = op.grid if grid is None else grid
    if grid != op.grid:
        raise ConfigurationError("grid", "does not match the operator's grid")
    opts = SolveOptions() if opts is None else opts
    algorithm = opts.algorithm
    if algorithm is None:
        algorithm = "mirror-descent" if spec.kind == "entropy" else "projected-gradient"
    elif spec.kind == "entropy" and algorithm != "mirror-descent":
        raise ConfigurationError("algorithm", "the entropy penalty requires mirror-descent")

    if opts.initial is None:
        f0 = np.full(grid.m, 1.0 / grid.area)
    else:
        f0 = np.asarray(opts.initial, dtype=float)
        if f0.shape != (grid.m,):
            raise ConfigurationError("initial", f"expected {grid.m} values, got shape {f0.shape}")
        f0 = project_simplex(f0, grid)

    t0 = time.perf_counter()
    prob = _Problem(op, spec)
    run = _mirror_descent if algorithm == "mirror-descent" else _projected_gradient
    f, trace, kkt, converged, iters = run(prob, f0.copy(), opts, grid)
    clamped = int((op.dot(f) < EPS_LOG).sum())
    report = SolveReport(
        iterations=iters,
        objective_trace=trace,
        final_kkt=kkt,
        clamp_count=clamped,
        converged=bool(converged),
        wall_time=time.perf_counter() - t0,
        algorithm=algorithm,
    )
    return DensityEstimate(f, grid), report
