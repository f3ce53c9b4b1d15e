"""Monte Carlo harness comparing the likelihood and kernel estimators.

Each run ``r`` at sample size ``n`` draws its data from the seed tuple
``(seed, n, r)``, so per-run results do not depend on execution order or
on how runs are spread over worker processes.
"""

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, RCError
from .estimators import RMLEOptions, fit_rmle, ise
from .geometry import Grid2D, build_operator
from .kernel import FilterKernel, default_h_grid, oracle_bandwidth
from .model import SCENARIOS, generate, true_density

log = logging.getLogger(__name__)

ESTIMATORS = ("rmle", "kernel")
STUDY_SAMPLE_SIZES = (500, 1000, 1500, 3000, 10000)
STUDY_GRID = Grid2D((-4.5, -4.5), (4.5, 4.5), (19, 19))


class StudyError(RCError):
    """Too many failed runs to report meaningful aggregates."""


@dataclass(frozen=True)
class KernelOptions:
    h_grid: tuple = tuple(float(h) for h in default_h_grid())
    taper: str = "cosine"

    def to_dict(self):
        return {"h_grid": list(self.h_grid), "taper": self.taper}


@dataclass(frozen=True)
class StudyConfig:
    scenario: str = "unbounded"
    sample_sizes: tuple = STUDY_SAMPLE_SIZES
    runs: int = 20
    estimators: tuple = ESTIMATORS
    grid: Grid2D = STUDY_GRID
    seed: int = 0
    rmle: RMLEOptions = field(default_factory=RMLEOptions)
    kernel: KernelOptions = field(default_factory=KernelOptions)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigurationError("scenario", f"choose from {tuple(SCENARIOS)}")
        sizes = tuple(int(n) for n in self.sample_sizes)
        if not sizes or any(n < 2 for n in sizes) or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigurationError("sample_sizes", "must be increasing integers >= 2")
        object.__setattr__(self, "sample_sizes", sizes)
        if int(self.runs) != self.runs or self.runs < 1:
            raise ConfigurationError("runs", "must be a positive integer")
        est = tuple(self.estimators)
        if not est or any(e not in ESTIMATORS for e in est):
            raise ConfigurationError("estimators", f"choose a subset of {ESTIMATORS}")
        object.__setattr__(self, "estimators", est)

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "sample_sizes": list(self.sample_sizes),
            "runs": int(self.runs),
            "estimators": list(self.estimators),
            "grid": {"lo": list(self.grid.lo), "hi": list(self.grid.hi), "k": list(self.grid.k)},
            "seed": int(self.seed),
            "rmle": self.rmle.to_dict(),
            "kernel": self.kernel.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        g = d.get("grid")
        kw = dict(d)
        if g is not None:
            kw["grid"] = Grid2D(tuple(g["lo"]), tuple(g["hi"]), tuple(g["k"]))
        if "rmle" in d:
            kw["rmle"] = RMLEOptions(**d["rmle"])
        if "kernel" in d:
            k = dict(d["kernel"])
            if "h_grid" in k:
                k["h_grid"] = tuple(float(h) for h in k["h_grid"])
            kw["kernel"] = KernelOptions(**k)
        for key in ("sample_sizes", "estimators"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)


@dataclass
class CellResult:
    """All runs of one estimator at one sample size."""

    ise: list
    params: list
    converged: list

    @property
    def valid(self):
        return [v for v in self.ise if v is not None and np.isfinite(v)]

    @property
    def mise(self):
        v = self.valid
        return float(np.mean(v)) if v else float("nan")

    @property
    def var_ise(self):
        v = self.valid
        return float(np.var(v, ddof=1)) if len(v) > 1 else 0.0

    @property
    def single_run(self):
        return len(self.valid) == 1

    def to_dict(self):
        return {
            "mise": self.mise,
            "var_ise": self.var_ise,
            "single_run": self.single_run,
            "runs": len(self.ise),
            "failed": len(self.ise) - len(self.valid),
            "converged": int(sum(bool(c) for c in self.converged)),
            "ise": self.ise,
            "params": self.params,
        }


@dataclass
class SimulationReport:
    config: StudyConfig
    cells: dict  # (estimator, n) -> CellResult
    diagnostics: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def mise(self, estimator, n):
        return self.cells[(estimator, n)].mise

    def var_ise(self, estimator, n):
        return self.cells[(estimator, n)].var_ise

    def to_dict(self):
        # timing is kept out so identical configs serialize identically
        results = {}
        for est in self.config.estimators:
            results[est] = {str(n): self.cells[(est, n)].to_dict() for n in self.config.sample_sizes}
        return {"config": self.config.to_dict(), "results": results, "diagnostics": self.diagnostics}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self):
        est = list(self.config.estimators)
        names = {"rmle": "RMLE", "kernel": "Kernel Method"}
        title = "Bounded Support" if self.config.scenario == "bounded" else "Unbounded Support"
        lines = [f"Monte Carlo Simulation Results for {title} ({self.config.runs} runs)"]
        head = f"{'':>8}" + "".join(f"{names[e]:^26}" for e in est)
        sub = f"{'n':>8}" + "".join(f"{'MISE':>12} {'Variance (ISE)':>13}" for _ in est)
        rule = "-" * len(sub)
        lines += [rule, head, sub, rule]
        for n in self.config.sample_sizes:
            row = f"{n:>8,}"
            for e in est:
                c = self.cells[(e, n)]
                row += f"{c.mise:>12.3e} {c.var_ise:>13.3e}"
            lines.append(row)
        lines.append(rule)
        return "\n".join(lines) + "\n"


def _fit_run(task):
    config, n, r = task
    scenario = SCENARIOS[config.scenario]
    grid = config.grid
    truth = true_density(scenario.truth, grid)
    data = generate(scenario, n, (config.seed, n, r))
    out = {}
    if "rmle" in config.estimators:
        try:
            op = build_operator(grid, data)
            fit = fit_rmle(op, config.rmle)
            out["rmle"] = (ise(fit.estimate, truth, grid), fit.alpha, fit.converged)
        except RCError as exc:
            log.warning("rmle failed at n=%d run %d: %s", n, r, exc)
            out["rmle"] = (None, None, False)
    if "kernel" in config.estimators:
        try:
            h, ises, _ = oracle_bandwidth(
                data, grid, truth, np.asarray(config.kernel.h_grid), FilterKernel(config.kernel.taper)
            )
            out["kernel"] = (float(ises.min()), h, True)
        except RCError as exc:
            log.warning("kernel failed at n=%d run %d: %s", n, r, exc)
            out["kernel"] = (None, None, False)
    return n, r, out


def default_workers():
    env = os.environ.get("RC_RMLE_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_study(config, workers=1):
    """Run every (sample size, run) pair and aggregate ISE per estimator."""
    t0 = time.perf_counter()
    tasks = [(config, n, r) for n in config.sample_sizes for r in range(config.runs)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fit_run, tasks))
    else:
        results = [_fit_run(t) for t in tasks]

    cells = {}
    for est in config.estimators:
        for n in config.sample_sizes:
            cells[(est, n)] = CellResult([None] * config.runs, [None] * config.runs, [False] * config.runs)
    for n, r, out in results:
        for est, (v, p, conv) in out.items():
            c = cells[(est, n)]
            c.ise[r], c.params[r], c.converged[r] = v, p, conv

    for (est, n), c in cells.items():
        if len(c.valid) * 2 < config.runs:
            raise StudyError(
                f"{est} at n={n}: only {len(c.valid)} of {config.runs} runs succeeded"
            )
    diagnostics = {
        f"{est}:{n}": {"unconverged_runs": int(sum(not x for x in c.converged))}
        for (est, n), c in cells.items()
    }
    return SimulationReport(config, cells, diagnostics, time.perf_counter() - t0)
