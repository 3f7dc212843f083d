import csv

import numpy as np
import pytest
from numpy.testing import assert_allclose

from khronos import Surrogate
from khronos.poisson import (
    POISSON_COLUMNS,
    dof_to_elements,
    error_metrics,
    make_poisson_problem,
    solve_poisson,
    trapezoid_weights,
    write_results_csv,
)
from khronos.training import TrainConfig
from oracles import poisson_zero_l2sq

PROB = make_poisson_problem()


def test_source_vanishes_on_center_line():
    y = np.linspace(0, 1, 11)
    assert_allclose(PROB.source(np.full_like(y, 0.5), y), 0.0, atol=1e-12)


def test_exact_solution_boundary():
    t = np.random.default_rng(0).random(200)
    z, o = np.zeros_like(t), np.ones_like(t)
    for xs, ys in ((z, t), (o, t), (t, z), (t, o)):
        assert np.max(np.abs(PROB.exact_u(xs, ys))) <= 1e-15


def test_separable_source_matches_direct_formula():
    x, y = np.random.default_rng(1).random((2, 1000))
    sep, direct = PROB.source(x, y), PROB.source_direct(x, y)
    assert np.max(np.abs(sep - direct) / np.maximum(np.abs(direct), 1.0)) <= 1e-12


def test_exact_gradient_finite_differences():
    x, y = np.random.default_rng(2).uniform(0.01, 0.99, (2, 50))
    h = 1e-6
    gx, gy = PROB.exact_grad(x, y)
    fx = (PROB.exact_u(x + h, y) - PROB.exact_u(x - h, y)) / (2 * h)
    fy = (PROB.exact_u(x, y + h) - PROB.exact_u(x, y - h)) / (2 * h)
    assert_allclose(gx, fx, atol=1e-6)
    assert_allclose(gy, fy, atol=1e-6)


@pytest.mark.parametrize("dof,ne", [(16, 6), (32, 14), (64, 30), (128, 62)])
def test_dof_mapping(dof, ne):
    assert dof_to_elements(dof) == ne
    assert Surrogate(2, 1, ne).parameter_count() == dof


@pytest.mark.parametrize("dof", [15, 4, 0])
def test_dof_mapping_rejects(dof):
    with pytest.raises(ValueError):
        dof_to_elements(dof)


def test_trapezoid_weights():
    w = trapezoid_weights(5)
    assert_allclose(w, [0.125, 0.25, 0.25, 0.25, 0.125])


class _Exact:
    """Stand-in surrogate that returns the exact solution on the grid."""

    def eval_grid(self, axes):
        X, Y = np.meshgrid(*axes, indexing="ij")
        return PROB.exact_u(X, Y)

    def grad_grid(self, axes):
        X, Y = np.meshgrid(*axes, indexing="ij")
        return np.stack(PROB.exact_grad(X, Y))


def test_metrics_vanish_for_exact_solution():
    l2, h1 = error_metrics(_Exact(), PROB, grid_n=200)
    assert l2 <= 1e-12 and h1 <= 1e-12


def test_metrics_zero_surrogate():
    s = Surrogate(2, 1, 4)
    s.weights[0][0][:] = 0.0
    l2, _ = error_metrics(s, PROB, grid_n=1000)
    assert abs(l2 - poisson_zero_l2sq()) <= 1e-6


def test_metrics_grid_refinement():
    s, _, _ = solve_poisson(16, TrainConfig(epochs=300, lr_start=0.05, lr_end=1e-3), grid_n=50)
    coarse, _ = error_metrics(s, PROB, 500)
    fine, _ = error_metrics(s, PROB, 1000)
    assert abs(coarse - fine) / fine < 0.01


def test_solve_small_budget():
    s, m, report = solve_poisson(16, grid_n=400)
    assert m["dof"] == 16 and m["params_total"] == 16 and m["params_free"] == 12
    assert m["L2sq"] <= 1e-3
    assert m["energy_final"] <= m["energy_initial"]
    assert report.loss_history[-1] <= report.loss_history[0]
    t = np.linspace(0, 1, 1000)
    edges = np.concatenate(
        [np.column_stack(c) for c in ((0 * t, t), (0 * t + 1, t), (t, 0 * t), (t, 0 * t + 1))]
    )
    assert np.max(np.abs(s.forward(edges))) <= 1e-14


def test_results_csv(tmp_path):
    rows = [dict(dof=16, epochs=3, L2sq=1e-3, H1sq=0.1, wall_time_s=0.5, params_total=16, params_free=12, extra=1)]
    write_results_csv(rows, tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fh:
        got = list(csv.DictReader(fh))
    assert list(got[0].keys()) == POISSON_COLUMNS
    assert float(got[0]["L2sq"]) == 1e-3
