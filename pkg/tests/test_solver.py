import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from rc_rmle import ConfigurationError
from rc_rmle.geometry import Grid2D, build_grid, build_operator, operator_from_normalized
from rc_rmle.model import SCENARIOS, generate
from rc_rmle.objective import RegularizerSpec, objective, quadratic_form
from rc_rmle.solver import SolveOptions, kkt_residual, project_simplex, solve

from oracles import brute_force_simplex_projection, dense_problem, multistart_minimum


def toy_instance(seed):
    """Random grid of at most 5x5 cells with at most 10 lines through its interior."""
    rng = np.random.default_rng(seed)
    k = tuple(int(v) for v in rng.integers(2, 6, 2))
    grid = Grid2D((-2.0, -2.0), (2.0, 2.0), k)
    n = int(rng.integers(3, 11))
    phi = rng.uniform(-np.pi / 2, np.pi / 2, n)
    theta = np.column_stack([np.cos(phi), np.sin(phi)])
    s = np.sum(theta * rng.uniform(-1.5, 1.5, (n, 2)), axis=1)
    return grid, operator_from_normalized(grid, s, theta)


def two_cell_toy():
    # 2x2 grid; the line b0 + b1 = 0.2 clips only the lower-left cell
    grid = build_grid((0, 0), (1, 1), (2, 2))
    r = 1 / np.sqrt(2)
    return grid, operator_from_normalized(grid, [0.2 * r], [[r, r]])


def test_project_feasible_is_identity():
    g = build_grid((0, 0), (1, 1), (2, 3))
    rng = np.random.default_rng(0)
    for _ in range(20):
        f = rng.dirichlet(np.ones(g.m)) / g.cell_area
        assert_allclose(project_simplex(f, g), f, atol=1e-12)


def test_project_small_examples():
    assert_allclose(project_simplex(np.array([2.0, 0.0]), 1.0), [1.0, 0.0], atol=1e-15)
    assert_allclose(project_simplex(np.full(3, 0.5), 1.0), np.full(3, 1 / 3), atol=1e-15)


def test_project_matches_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(300):
        m = int(rng.integers(1, 9))
        area = rng.uniform(0.1, 2)
        v = rng.normal(0, 3, m)
        assert_allclose(project_simplex(v, area), brute_force_simplex_projection(v, 1 / area), atol=1e-10)


def test_concentration_without_penalty():
    grid, op = two_cell_toy()
    est, rep = solve(op, RegularizerSpec("l2", 0.0), grid)
    expected = np.array([1 / grid.cell_area, 0, 0, 0])
    assert_allclose(est.values, expected, atol=1e-6)
    assert rep.converged


def test_penalty_dominated_limit_is_uniform():
    grid, op = two_cell_toy()
    est, rep = solve(op, RegularizerSpec("l2", 1e6), grid)
    assert_allclose(est.values, np.full(4, 1 / grid.area), atol=1e-3)
    assert kkt_residual(op, RegularizerSpec("l2", 1e6), grid, est.values) <= 1e-6


def test_two_cell_grid():
    # literally two cells: line crosses only cell 0
    grid = Grid2D((0.0, 0.0), (2.0, 1.0), (2, 2))
    op = operator_from_normalized(grid, [0.5], [[1.0, 0.0]])
    est, _ = solve(op, RegularizerSpec("l2", 0.0), grid)
    assert_allclose(est.values[[1, 3]], 0.0, atol=1e-6)
    assert_allclose(est.integral, 1.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("kind", ["l2", "entropy", "h1"])
def test_matches_multistart_oracle(seed, kind):
    grid, op = toy_instance(seed)
    spec = RegularizerSpec(kind, 0.1)
    est, rep = solve(op, spec, grid)
    q = quadratic_form(kind, grid).toarray() if kind == "h1" else None
    fun, grad = dense_problem(op.matrix, grid.cell_area, kind, 0.1, q)
    best, _ = multistart_minimum(fun, grad, grid.m, grid.cell_area, starts=5, seed=seed, pg_iters=500)
    assert abs(objective(op, spec, est.values).total - best) <= 1e-6
    assert rep.converged
    assert rep.final_kkt <= 1e-6
    assert est.values.min() >= 0
    assert abs(est.integral - 1) <= 1e-8


def test_kkt_at_suboptimal_point():
    grid = build_grid((0, 0), (3, 3), (3, 3))
    # all lines pass through the top-right cell only
    op = operator_from_normalized(grid, [2.5, 2.5, 2.6], [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    uniform = np.full(9, 1 / 9)
    assert kkt_residual(op, RegularizerSpec("l2", 0.1), grid, uniform) > 0.01


def test_kkt_invariant_to_normal_shift():
    grid, op = toy_instance(11)
    spec = RegularizerSpec("l2", 0.2)
    f = np.random.default_rng(2).dirichlet(np.ones(grid.m)) / grid.cell_area
    g = objective(op, spec, f).gradient
    base = np.abs(f - project_simplex(f - g, grid)).max()
    for c in (-3.0, 0.5, 10.0):
        shifted = np.abs(f - project_simplex(f - (g + c * grid.cell_area), grid)).max()
        assert_allclose(shifted, base, atol=1e-12)
    assert_allclose(kkt_residual(op, spec, grid, f), base, rtol=1e-12)


@pytest.mark.parametrize("kind", ["l2", "h1", "h2"])
def test_monotone_trace(kind):
    grid = build_grid((-4.5, -4.5), (4.5, 4.5), (19, 19))
    op = build_operator(grid, generate(SCENARIOS["unbounded"], 500, 3))
    _, rep = solve(op, RegularizerSpec(kind, 0.3), grid)
    assert rep.algorithm == "projected-gradient"
    assert np.all(np.diff(rep.objective_trace) <= 1e-12)
    assert rep.converged


def test_entropy_uses_mirror_descent():
    grid, op = toy_instance(3)
    est, rep = solve(op, RegularizerSpec("entropy", 0.5), grid)
    assert rep.algorithm == "mirror-descent"
    assert est.values.min() > 0
    with pytest.raises(ConfigurationError):
        solve(op, RegularizerSpec("entropy", 0.5), grid, SolveOptions(algorithm="projected-gradient"))


def test_unique_minimizer_from_different_starts():
    rng = np.random.default_rng(4)
    for seed in range(5):
        grid, op = toy_instance(seed + 20)
        spec = RegularizerSpec("l2", 0.1)
        a, _ = solve(op, spec, grid, SolveOptions(initial=rng.dirichlet(np.ones(grid.m)) / grid.cell_area))
        b, _ = solve(op, spec, grid, SolveOptions(initial=rng.dirichlet(np.ones(grid.m)) / grid.cell_area))
        assert np.abs(a.values - b.values).max() <= 1e-4


def test_deterministic():
    grid = build_grid((-4.5, -4.5), (4.5, 4.5), (19, 19))
    op = build_operator(grid, generate(SCENARIOS["unbounded"], 300, 8))
    a, ra = solve(op, RegularizerSpec("l2", 0.5), grid)
    b, rb = solve(op, RegularizerSpec("l2", 0.5), grid)
    assert_array_equal(a.values, b.values)
    assert_array_equal(ra.objective_trace, rb.objective_trace)


def test_nonconvergence_returns_best_iterate():
    grid = build_grid((-4.5, -4.5), (4.5, 4.5), (19, 19))
    op = build_operator(grid, generate(SCENARIOS["unbounded"], 500, 2))
    est, rep = solve(op, RegularizerSpec("l2", 0.01), grid, SolveOptions(max_iters=3))
    assert not rep.converged
    assert rep.iterations <= 3
    assert abs(est.integral - 1) <= 1e-8 and est.values.min() >= 0


def test_options_validation():
    with pytest.raises(ConfigurationError):
        SolveOptions(max_iters=0)
    with pytest.raises(ConfigurationError):
        SolveOptions(tol_kkt=0.0)
    with pytest.raises(ConfigurationError):
        SolveOptions(algorithm="newton")
