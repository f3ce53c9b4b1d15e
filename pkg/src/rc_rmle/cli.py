"""Command-line interface: ``rc-rmle {estimate,simulate,baseline,replay}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every run writes ``manifest.json`` next to its outputs; ``rc-rmle replay``
re-executes a manifest and reproduces the primary outputs byte for byte.
"""

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, RCError
from .estimators import RMLEOptions, fit_rmle, ise
from .geometry import build_grid, build_operator
from .lepskii import alpha_path
from .kernel import TAPERS, FilterKernel, default_h_grid, kernel_estimate, oracle_bandwidth
from .model import SCENARIOS, generate, load_csv, true_density
from .objective import KINDS
from .simulation import STUDY_SAMPLE_SIZES, KernelOptions, StudyConfig, default_workers, run_study

log = logging.getLogger("rc_rmle")


class UsageError(ConfigurationError):
    pass


def _version():
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0.0.0"


def _pair(text, cast, flag):
    try:
        parts = [cast(p) for p in str(text).split(",")]
    except ValueError:
        raise UsageError(flag, f"cannot parse {text!r}") from None
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise UsageError(flag, f"expected one or two comma-separated values, got {text!r}")
    return tuple(parts)


def _int_list(text, flag):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(flag, f"cannot parse {text!r}") from None


def _grid(args):
    lo = _pair(args.grid_min, float, "--grid-min")
    hi = _pair(args.grid_max, float, "--grid-max")
    k = _pair(args.grid_cells, int, "--grid-cells")
    try:
        return build_grid(lo, hi, k)
    except ConfigurationError as exc:
        flag = {"lo": "--grid-min", "hi": "--grid-max", "k": "--grid-cells"}.get(exc.field, exc.field)
        raise UsageError(flag, str(exc)) from None


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _density_csv(grid, values):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["b0", "b1", "f"])
    for (b0, b1), f in zip(grid.centers(), values):
        w.writerow([repr(float(b0)), repr(float(b1)), repr(float(f))])
    return buf.getvalue()


def _peak(grid, values):
    j = int(np.argmax(values))
    center = grid.centers()[j]
    d = grid.spacing
    return {
        "index": j,
        "center": [float(center[0]), float(center[1])],
        "cell_lo": [float(center[0] - d[0] / 2), float(center[1] - d[1] / 2)],
        "cell_hi": [float(center[0] + d[0] / 2), float(center[1] + d[1] / 2)],
        "value": float(values[j]),
    }


def _grid_dict(grid):
    return {"lo": list(grid.lo), "hi": list(grid.hi), "k": list(grid.k)}


class _Outputs:
    """Writes files into one output directory and records them for the manifest."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = {}

    def write(self, name, text):
        path = self.dir / name
        path.write_text(text, encoding="utf-8")
        self.files[name] = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return path

    def manifest(self, args, inputs, seed=None):
        resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "output_dir")}
        m = {
            "subcommand": args.command,
            "resolved_config": resolved,
            "input_digests": inputs,
            "artifact_version": _version(),
            "seed": seed,
            "outputs": dict(sorted(self.files.items())),
        }
        (self.dir / "manifest.json").write_text(_dump_json(m), encoding="utf-8")
        return m


def _load_input(args):
    args.input = str(Path(args.input).resolve())
    regressors = [r.strip() for r in args.regressors.split(",") if r.strip()]
    data = load_csv(args.input, args.response, regressors, args.intercept)
    return data, {str(args.input): _digest(args.input)}


def cmd_estimate(args):
    if args.alpha is not None and args.alpha < 0:
        raise UsageError("--alpha", "must be nonnegative")
    if args.regularizer not in KINDS:
        raise UsageError("--regularizer", f"choose from {KINDS}")
    grid = _grid(args)
    try:
        opts = RMLEOptions(
            regularizer=args.regularizer,
            c_l=args.cl,
            r=args.ratio,
            m_path=args.path_len,
            C=args.threshold_constant,
            sigma_scale=args.sigma_scale,
            max_iters=args.max_iters,
        )
        if args.alpha is None:
            alpha_path(2, args.cl, args.ratio, args.path_len)
    except ConfigurationError as exc:
        raise UsageError({"c_l": "--cl", "r": "--ratio", "m_path": "--path-len"}.get(exc.field, exc.field), str(exc)) from None
    data, digests = _load_input(args)
    op = build_operator(grid, data)
    fit = fit_rmle(op, opts, alpha=args.alpha)
    est = fit.estimate
    out = _Outputs(args.output_dir)
    out.write("density.csv", _density_csv(grid, est.values))
    final = fit.reports[0] if fit.lepskii is None else fit.lepskii.reports[fit.lepskii.selected_index - 1]
    report = {
        "method": "rmle",
        "selection": "fixed" if args.alpha is not None else "lepskii",
        "alpha": fit.alpha,
        "objective": float(final.objective_trace[-1]),
        "solver": final.summary(),
        "diagnostics": fit.diagnostics(),
        "grid": _grid_dict(grid),
        "n_observations": len(data),
        "n_retained": op.n_retained,
        "dropped_observations": op.dropped_count,
        "skipped_rows": list(data.skipped_rows),
        "integral": est.integral,
        "peak": _peak(grid, est.values),
    }
    if fit.lepskii is not None:
        report["lepskii"] = {
            "alphas": [float(a) for a in fit.lepskii.alphas],
            "selected_index": fit.lepskii.selected_index,
            "thresholds": [float(t) for t in fit.lepskii.thresholds],
            "sigma_scale": fit.lepskii.sigma_scale,
            "fallback": fit.lepskii.fallback,
        }
    out.write("report.json", _dump_json(report))
    out.manifest(args, digests)
    return 0


def cmd_simulate(args):
    sizes = list(STUDY_SAMPLE_SIZES) if args.full else _int_list(args.n, "--n")
    runs = 100 if args.full else args.runs
    estimators = [e.strip() for e in args.estimators.split(",") if e.strip()]
    grid = _grid(args)
    try:
        config = StudyConfig(
            scenario=args.scenario,
            sample_sizes=tuple(sizes),
            runs=runs,
            estimators=tuple(estimators),
            grid=grid,
            seed=args.seed,
            rmle=RMLEOptions(regularizer=args.regularizer, max_iters=args.max_iters),
            kernel=KernelOptions(taper=args.taper),
        )
    except ConfigurationError as exc:
        flag = {"sample_sizes": "--n", "runs": "--runs", "estimators": "--estimators"}.get(exc.field, exc.field)
        raise UsageError(flag, str(exc)) from None
    workers = args.workers if args.workers is not None else default_workers()
    report = run_study(config, workers=workers)
    out = _Outputs(args.output_dir)
    out.write("report.json", report.to_json() + "\n")
    out.write("table.txt", report.table())
    out.manifest(args, {}, seed=args.seed)
    log.info("study finished in %.1fs", report.wall_time)
    return 0


def cmd_baseline(args):
    if args.bandwidth is not None and not args.bandwidth > 0:
        raise UsageError("--bandwidth", "must be positive")
    if args.input is not None and args.oracle:
        raise UsageError("--oracle", "needs a known truth; use --scenario instead of --input")
    if args.input is None and args.scenario is None:
        raise UsageError("--input", "give either --input or --scenario")
    grid = _grid(args)
    truth = None
    seed = None
    if args.input is not None:
        data, digests = _load_input(args)
    else:
        scenario = SCENARIOS[args.scenario]
        data = generate(scenario, args.n, args.seed)
        truth = true_density(scenario.truth, grid)
        digests, seed = {}, args.seed
    filt = FilterKernel(args.taper)
    report = {"method": "kernel", "grid": _grid_dict(grid), "n_observations": len(data), "taper": args.taper}
    if args.oracle:
        h_grid = default_h_grid()
        h, ises, est = oracle_bandwidth(data, grid, truth, h_grid, filt)
        report.update(bandwidth=h, selection="oracle", h_grid=[float(v) for v in h_grid], ise_per_h=[float(v) for v in ises])
    else:
        h = args.bandwidth
        est = kernel_estimate(data, grid, h, filt)
        report.update(bandwidth=h, selection="fixed")
    if truth is not None:
        report["ise"] = ise(est, truth, grid)
    report["integral"] = est.integral
    report["peak"] = _peak(grid, est.values)
    out = _Outputs(args.output_dir)
    out.write("density.csv", _density_csv(grid, est.values))
    out.write("report.json", _dump_json(report))
    out.manifest(args, digests, seed=seed)
    return 0


def cmd_replay(args):
    manifest_path = Path(args.manifest)
    try:
        m = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError("--manifest", f"cannot read {manifest_path}: {exc}") from None
    for path, digest in m.get("input_digests", {}).items():
        if not os.path.exists(path) or _digest(path) != digest:
            raise UsageError("--manifest", f"input {path} is missing or has changed")
    cfg = dict(m["resolved_config"])
    cfg["output_dir"] = args.output_dir or str(manifest_path.parent)
    ns = argparse.Namespace(**cfg)
    ns.func = _COMMANDS[m["subcommand"]]
    status = ns.func(ns)
    if status == 0:
        written = json.loads((Path(cfg["output_dir"]) / "manifest.json").read_text(encoding="utf-8"))
        if written["outputs"] != m["outputs"]:
            log.error("replayed outputs differ from the manifest")
            return 1
    return status


_COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "baseline": cmd_baseline}


def _add_grid(p):
    p.add_argument("--grid-min", default="-4.5", help="lower corner, 'a' or 'a,b' (default -4.5)")
    p.add_argument("--grid-max", default="4.5", help="upper corner, 'a' or 'a,b' (default 4.5)")
    p.add_argument("--grid-cells", default="19", help="cells per axis, 'k' or 'k0,k1' (default 19)")


def _add_schema(p, required):
    p.add_argument("--input", required=required, help="CSV file with a header row")
    p.add_argument("--response", default="y", help="response column (default y)")
    p.add_argument("--regressors", default="x1", help="comma-separated regressor columns (default x1)")
    p.add_argument("--intercept", action="store_true", help="prepend a constant regressor")


def build_parser():
    parser = argparse.ArgumentParser(prog="rc-rmle", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="regularized ML estimate from CSV data")
    _add_schema(p, required=True)
    _add_grid(p)
    p.add_argument("--regularizer", default="l2", choices=KINDS)
    sel = p.add_mutually_exclusive_group()
    sel.add_argument("--alpha", type=float, help="fixed regularization parameter")
    sel.add_argument("--lepskii", action="store_true", help="balancing-rule choice of alpha (default)")
    p.add_argument("--cl", type=float, default=1.0, help="path start constant (default 1)")
    p.add_argument("--ratio", type=float, default=1.5, help="path ratio r > 1 (default 1.5)")
    p.add_argument("--path-len", type=int, default=12, help="number of alphas on the path (default 12)")
    p.add_argument("--threshold-constant", type=float, default=8.0, help="balancing constant C (default 8)")
    p.add_argument("--sigma-scale", type=float, default=None, help="noise scale; calibrated from the path if omitted")
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="Monte Carlo study of the simulation scenarios")
    p.add_argument("--scenario", choices=tuple(SCENARIOS), required=True)
    p.add_argument("--n", default="500,3000,10000", help="comma-separated sample sizes")
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--estimators", default="rmle,kernel")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full", action="store_true", help="full scale: 100 runs at all five sample sizes")
    p.add_argument("--regularizer", default="l2", choices=KINDS)
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--taper", default="cosine", choices=TAPERS)
    p.add_argument("--workers", type=int, default=None, help="worker processes (default $RC_RMLE_WORKERS or all cores)")
    _add_grid(p)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("baseline", help="kernel back-projection estimate")
    _add_schema(p, required=False)
    p.add_argument("--scenario", choices=tuple(SCENARIOS), help="simulate data instead of reading --input")
    p.add_argument("--n", type=int, default=10000, help="synthetic sample size")
    p.add_argument("--seed", type=int, default=0)
    bw = p.add_mutually_exclusive_group(required=True)
    bw.add_argument("--bandwidth", type=float)
    bw.add_argument("--oracle", action="store_true", help="minimum-ISE bandwidth (needs --scenario)")
    p.add_argument("--taper", default="cosine", choices=TAPERS)
    _add_grid(p)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("replay", help="re-run a manifest")
    p.add_argument("manifest")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"rc-rmle: error: {exc}", file=sys.stderr)
        return 2
    except RCError as exc:
        print(f"rc-rmle: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
