import csv
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from khronos import Surrogate
from khronos.inversion import InversionJob, gauss_newton_step, invert_batch, make_inversion_toy, toy_function
from khronos.regression import lhs_sample
from oracles import lstsq_spline_weights


def fitted_1d(g, n_elements=4):
    s = Surrogate(1, 1, n_elements)
    s.weights[0][0][0] = lstsq_spline_weights(n_elements, g)
    return s


@pytest.fixture(scope="module")
def toy():
    return make_inversion_toy()


def test_affine_surrogate_one_step():
    s = fitted_1d(lambda x: x)
    x1 = gauss_newton_step(s, [0.1], 0.5)
    assert x1[0] == pytest.approx(0.5, abs=1e-12)
    assert abs(s.forward(x1) - 0.5) <= 1e-12


def test_constant_surrogate_stays_put():
    s = Surrogate(1, 1, 4)
    s.weights[0][0][:] = 0.3
    assert_array_equal(s.grad_input([[0.2], [0.7]]), 0.0)
    res = invert_batch(s, InversionJob(0.8, [[0.2], [0.7]], max_iters=10))
    assert_allclose(res.final_points, [[0.2], [0.7]], atol=1e-12)
    assert not res.converged.any()
    assert res.failure_rate == 1.0


def test_quadratic_surrogate_iterates():
    s = fitted_1d(lambda x: x * x)
    x = np.array([1.0])
    ref = 1.0
    for k in range(6):
        x = gauss_newton_step(s, x, 0.25)
        # scalar reference: x <- x - (x^2 - z) / (2x)^2 * 2x
        ref = ref - (ref * ref - 0.25) / (2 * ref) ** 2 * (2 * ref)
        if k == 0:
            assert x[0] == pytest.approx(0.625, abs=1e-12)
        assert x[0] == pytest.approx(ref, abs=1e-10)
    assert x[0] == pytest.approx(0.5, abs=1e-6)


def test_step_clamps_to_domain():
    s = fitted_1d(lambda x: x)
    assert gauss_newton_step(s, [0.5], 3.0)[0] == 1.0
    assert gauss_newton_step(s, [0.5], -3.0)[0] == 0.0


def test_already_solved_batch():
    s = fitted_1d(lambda x: x)
    x0 = np.linspace(0, 1, 7)[:, None]
    res = invert_batch(s, InversionJob(s.forward(x0), x0, max_iters=3))
    assert_allclose(res.final_points, x0, atol=1e-15)
    assert res.failure_rate == 0.0
    assert res.rmse <= 1e-15


def test_job_validation():
    with pytest.raises(ValueError):
        InversionJob(np.zeros(3), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        InversionJob(0.0, np.zeros((4, 2)), max_iters=0)
    job = InversionJob(0.5, np.zeros((4, 2)))
    assert_array_equal(job.targets, np.full(4, 0.5))


def test_toy_function_values():
    assert abs(toy_function(0.5, 0.5)) <= 1e-15
    assert toy_function(0.125, 0.25) == pytest.approx(1.25, abs=1e-14)


def test_toy_surrogate_accuracy(toy):
    _, s, info = toy
    assert info["test_mse"] <= 1e-3
    assert info["n_samples"] == 8000
    assert info["parameter_count"] == s.parameter_count()


def test_toy_level_set(toy):
    _, s, _ = toy
    res = invert_batch(s, InversionJob(0.0, lhs_sample(2000, 2, 11), max_iters=10))
    assert res.failure_rate <= 0.01
    assert res.rmse <= 5e-3
    assert np.all((res.final_points >= 0) & (res.final_points <= 1))
    # residuals are recomputed from the final points
    assert np.max(np.abs(res.residuals - np.abs(s.forward(res.final_points)))) <= 1e-14
    # the median residual does not grow from one iteration to the next
    assert np.all(np.diff(res.median_history) <= 1e-15)


def test_toy_failure_rate_steady_under_doubling(toy):
    _, s, _ = toy
    rates = [
        invert_batch(s, InversionJob(0.0, lhs_sample(b, 2, b), max_iters=10)).failure_rate
        for b in (1000, 2000, 4000)
    ]
    assert np.all(np.abs(np.diff(rates)) <= 0.005)


def test_per_point_independence(toy):
    _, s, _ = toy
    x0 = lhs_sample(300, 2, 3)
    z = np.random.default_rng(0).uniform(-0.5, 0.5, 300)
    perm = np.random.default_rng(1).permutation(300)
    a = invert_batch(s, InversionJob(z, x0))
    b = invert_batch(s, InversionJob(z[perm], x0[perm]))
    assert_array_equal(b.final_points, a.final_points[perm])
    assert_array_equal(b.residuals, a.residuals[perm])


def test_result_export(tmp_path, toy):
    _, s, _ = toy
    res = invert_batch(s, InversionJob(0.0, lhs_sample(50, 2, 4)))
    res.to_csv(tmp_path / "ls.csv")
    res.to_json(tmp_path / "ls.json")
    with open(tmp_path / "ls.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["x", "y", "residual", "converged"]
    assert len(rows) == 50
    summary = json.loads((tmp_path / "ls.json").read_text())
    assert set(summary) >= {"batch", "total_ms", "per_point_us", "failure_pct", "rmse"}
    assert summary["batch"] == 50
