import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from rc_rmle import ConfigurationError
from rc_rmle.geometry import build_grid
from rc_rmle.lepskii import alpha_path, distance_matrix, grid_norm, select, select_index
from rc_rmle.objective import DensityEstimate


def test_path_values():
    p = alpha_path(10000, 1.0, 1.5, 3)
    assert_allclose(p.alphas, [0.0921034037, 0.1381551056, 0.2072326584], rtol=1e-9)
    assert_allclose(p.alphas[0], math.log(1e4) / 100, rtol=1e-15)


def test_path_increasing():
    p = alpha_path(500, 0.3, 1.2, 20)
    assert np.all(np.diff(p.alphas) > 0) and p.alphas[0] > 0


@pytest.mark.parametrize(
    "kw,field",
    [({"r": 1.0}, "r"), ({"c_l": 0.0}, "c_l"), ({"m_path": 1}, "m_path"), ({"n": 1}, "n")],
)
def test_path_errors(kw, field):
    args = {"n": 100, "c_l": 1.0, "r": 1.5, "m_path": 5}
    args.update(kw)
    with pytest.raises(ConfigurationError) as exc:
        alpha_path(**args)
    assert exc.value.field == field


def test_thresholds_non_increasing():
    p = alpha_path(1000, 1.0, 1.5, 12)
    tau = p.thresholds(8.0, 0.01)
    assert np.all(np.diff(tau) <= 0)
    assert_allclose(tau[0], 0.08)
    assert_allclose(tau[3], 0.08 * 1.5**-1.5)


def test_zero_distances_select_last():
    j, fallback = select_index(np.zeros((6, 6)), np.full(6, 1e-3))
    assert j == 6 and not fallback


def test_first_violation_selects_first():
    d = np.zeros((4, 4))
    d[0, 1] = d[1, 0] = 1.0
    d[0, 2:] = d[2:, 0] = 1.0
    j, fallback = select_index(d, np.full(4, 0.5))
    assert j == 1 and fallback


def test_max_form_rule():
    # index 3 violates against 1 but index 4 is compatible with all predecessors
    d = np.zeros((5, 5))
    d[0, 2] = d[2, 0] = 1.0
    d[0, 4] = d[4, 0] = 1.0
    j, _ = select_index(d, np.full(5, 0.5))
    assert j == 4


distance_matrices = st.integers(2, 8).flatmap(
    lambda m: st.lists(st.floats(0, 10), min_size=m * m, max_size=m * m).map(
        lambda v: np.triu(np.reshape(v, (m, m)), 1) + np.triu(np.reshape(v, (m, m)), 1).T
    )
)


@settings(max_examples=200, deadline=None)
@given(d=distance_matrices, c=st.floats(0.01, 10), r=st.floats(1.01, 3))
def test_doubling_scale_never_decreases_index(d, c, r):
    m = d.shape[0]
    tau = c * r ** ((1.0 - np.arange(1, m + 1)) / 2)
    j1, _ = select_index(d, tau)
    j2, _ = select_index(d, 2 * tau)
    assert 1 <= j1 <= m
    assert j2 >= j1
    assert select_index(d.copy(), tau.copy())[0] == j1


def _fake_solver(grid, targets):
    calls = []

    def solve_fn(alpha, warm):
        calls.append((alpha, None if warm is None else warm.copy()))
        return DensityEstimate(targets[alpha], grid), {"alpha": alpha}

    return solve_fn, calls


def test_select_runs_path_downward_with_warm_starts():
    grid = build_grid((0, 0), (1, 1), (2, 2))
    path = alpha_path(100, 1.0, 2.0, 4)
    rng = np.random.default_rng(0)
    targets = {float(a): rng.dirichlet(np.ones(4)) / grid.cell_area for a in path.alphas}
    solve_fn, calls = _fake_solver(grid, targets)
    res = select(path, solve_fn, grid)
    assert [c[0] for c in calls] == sorted(targets, reverse=True)
    assert calls[0][1] is None
    assert_allclose(calls[1][1], targets[calls[0][0]])
    expected = distance_matrix([targets[float(a)] for a in path.alphas], grid)
    assert_allclose(res.pairwise_distances, expected)
    assert 1 <= res.selected_index <= 4
    assert_allclose(res.sigma_scale, np.median(np.diag(expected, 1)))
    assert res.alpha == pytest.approx(path.alphas[res.selected_index - 1])


def test_select_identical_estimates():
    grid = build_grid((0, 0), (1, 1), (2, 2))
    path = alpha_path(100, 1.0, 1.5, 5)
    targets = {float(a): np.full(4, 1.0) for a in path.alphas}
    solve_fn, _ = _fake_solver(grid, targets)
    res = select(path, solve_fn, grid)
    assert res.selected_index == 5 and not res.fallback


def test_explicit_sigma_scale():
    grid = build_grid((0, 0), (1, 1), (2, 2))
    path = alpha_path(100, 1.0, 1.5, 3)
    vals = [np.array([4.0, 0, 0, 0]), np.array([0, 4.0, 0, 0]), np.array([0, 0, 4.0, 0])]
    targets = dict(zip(map(float, path.alphas), vals))
    solve_fn, _ = _fake_solver(grid, targets)
    assert select(path, solve_fn, grid, sigma_scale=1e-6).selected_index == 1
    assert select(path, solve_fn, grid, sigma_scale=1e6).selected_index == 3
    with pytest.raises(ConfigurationError):
        select(path, solve_fn, grid, sigma_scale=-1.0)


def test_grid_norms():
    grid = build_grid((0, 0), (1, 1), (2, 2))
    v = np.array([1.0, 2.0, 3.0, 4.0])
    assert_allclose(grid_norm(grid, v), math.sqrt(30 * 0.25))
    assert grid_norm(grid, v, "h1") > grid_norm(grid, v)
    with pytest.raises(ConfigurationError):
        grid_norm(grid, v, "linf")
