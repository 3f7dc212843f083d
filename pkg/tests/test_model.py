import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from khronos import Surrogate
from khronos.basis import basis_matrix, build_knots
from oracles import central_fd, lstsq_spline_weights, rel_err


def random_surrogate(rng, layers=1):
    P = int(rng.integers(1, 5))
    M = int(rng.integers(1, 4))
    ne = [int(v) for v in rng.integers(1, 9, size=P)]
    s = Surrogate(P, M, ne, layers=layers, seed=int(rng.integers(1 << 30)))
    for row in s.weights:
        for w in row:
            w[...] = rng.uniform(0.2, 1.5, size=w.shape)
    return s


def fitted_xy(n_elements=4):
    """P=2, M=1 surrogate reproducing x(1-x) * y(1-y)."""
    s = Surrogate(2, 1, n_elements)
    w = lstsq_spline_weights(n_elements, lambda t: t * (1 - t))
    s.weights[0][0][0] = w
    s.weights[0][1][0] = w
    return s


# ----------------------------------------------------------------------
# feature maps


def test_feature_map_ones():
    s = Surrogate(3, 2, 5)
    s.weights[0][1][:] = 1.0
    assert_allclose(s.feature_map(1, 1, np.linspace(0, 1, 17)), 1.0, atol=1e-15)


def test_feature_map_zeros():
    s = Surrogate(2, 1, 5)
    s.weights[0][0][:] = 0.0
    assert_array_equal(s.feature_map(0, 0, np.linspace(0, 1, 9)), 0.0)


def test_feature_map_reproduces_quadratic():
    s = fitted_xy(6)
    x = np.random.default_rng(3).random(100)
    assert np.max(np.abs(s.feature_map(0, 0, x) - x * (1 - x))) <= 1e-10


def test_feature_map_scalar_input():
    s = fitted_xy()
    assert isinstance(s.feature_map(0, 1, 0.5), float)
    assert s.feature_map(0, 1, 0.5) == pytest.approx(0.25, abs=1e-12)


# ----------------------------------------------------------------------
# forward


def test_forward_product_of_ones():
    s = Surrogate(20, 1, 3)
    for w in s.weights[0]:
        w[:] = 1.0
    x = np.random.default_rng(0).random(20)
    assert s.forward(x) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("P", [1, 3, 5])
def test_forward_opposite_modes_cancel(P):
    s = Surrogate(P, 2, 4)
    for w in s.weights[0]:
        w[0] = 1.0
        w[1] = -1.0
    x = np.random.default_rng(P).random((10, P))
    assert_allclose(s.forward(x), 0.0, atol=1e-15)


def test_forward_fitted_product():
    assert fitted_xy().forward([0.5, 0.5]) == pytest.approx(0.0625, abs=1e-12)


def test_forward_batch_and_point_agree():
    rng = np.random.default_rng(4)
    s = random_surrogate(rng)
    x = rng.random((6, s.dims))
    assert_allclose(s.forward(x), [s.forward(xi) for xi in x], rtol=1e-15)
    assert_allclose(s(x), s.forward(x), rtol=0)


def test_forward_rejects_wrong_width():
    s = Surrogate(3, 1, 2)
    with pytest.raises(ValueError):
        s.forward(np.zeros((4, 2)))


def test_forward_rejects_outside_domain():
    s = Surrogate(2, 1, 2)
    with pytest.raises(ValueError):
        s.forward([0.5, 1.5])


def test_separability():
    rng = np.random.default_rng(5)
    for _ in range(20):
        s = random_surrogate(rng)
        x = rng.random(s.dims)
        direct = s.forward(x)
        recon = sum(
            np.prod([s.feature_map(j, p, x[p]) for p in range(s.dims)]) for j in range(s.modes)
        )
        assert abs(direct - recon) <= 1e-14 * max(abs(recon), 1.0)


# ----------------------------------------------------------------------
# gradients


def test_grad_input_constant_maps():
    s = Surrogate(3, 2, 4)
    for w in s.weights[0]:
        w[0] = 0.7
        w[1] = -1.3
    g = s.grad_input(np.random.default_rng(0).random((20, 3)))
    assert np.max(np.abs(g)) <= 1e-13


def test_grad_input_fitted_product():
    g = fitted_xy().grad_input([0.25, 0.5])
    assert g[0] == pytest.approx(0.125, abs=1e-12)
    assert g[1] == pytest.approx(0.0, abs=1e-12)


def test_grad_input_finite_differences():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        s = random_surrogate(rng)
        x = rng.uniform(0.01, 0.99, s.dims)
        worst = max(worst, rel_err(s.grad_input(x), central_fd(s.forward, x)))
    assert worst <= 1e-5


def _fd_params(s, x, upstream=1.0):
    base = s.get_params()

    def f(theta):
        c = s.copy()
        c.set_params(theta)
        return float(np.sum(upstream * c.forward(x)))

    return central_fd(f, base)


def _flat_grads(s, grads):
    out = []
    for j in range(s.modes):
        for p in range(s.dims):
            for l in range(s.layers):
                out.append(grads[l][p][j])
    return np.concatenate(out)


def test_grad_params_finite_differences():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        s = random_surrogate(rng)
        x = rng.uniform(0.01, 0.99, (3, s.dims))
        up = rng.normal(size=3)
        an = _flat_grads(s, s.grad_params(x, up))
        worst = max(worst, rel_err(an, _fd_params(s, x, up)))
    assert worst <= 1e-5


def test_grad_params_two_layers_finite_differences():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(20):
        s = Surrogate(2, 2, 3, layers=2, seed=int(rng.integers(100)), init_noise=0.02)
        x = rng.uniform(0.05, 0.95, (4, 2))
        an = _flat_grads(s, s.grad_params(x))
        worst = max(worst, rel_err(an, _fd_params(s, x)))
    assert worst <= 1e-5


def test_grad_params_linear_model():
    s = Surrogate(1, 1, 5)
    x = 0.37
    g = s.grad_params([x])[0][0][0]
    assert_allclose(g, basis_matrix(build_knots(5), x)[0], atol=1e-15)


def test_grad_params_zero_off_support():
    s = Surrogate(2, 2, 8, seed=1)
    g = s.grad_params([0.05, 0.5])
    # x0 = 0.05 lies in element 0, so only bases 0..2 of dimension 0 see it
    assert_array_equal(g[0][0][:, 3:], 0.0)


def test_linearity_in_single_dimension_weights():
    rng = np.random.default_rng(9)
    s = random_surrogate(rng)
    x = rng.random((5, s.dims))
    w0 = s.weights[0][0][0].copy()
    d = rng.normal(size=w0.shape)
    vals = []
    for t in (0.0, 1.0, 2.5):
        s.weights[0][0][0] = w0 + t * d
        vals.append(s.forward(x))
    # three collinear points: f(2.5) - f(0) == 2.5 * (f(1) - f(0))
    assert_allclose(vals[2] - vals[0], 2.5 * (vals[1] - vals[0]), rtol=1e-12, atol=1e-13)


# ----------------------------------------------------------------------
# grids


def test_eval_grid_matches_forward():
    rng = np.random.default_rng(10)
    s = Surrogate(2, 3, [5, 7], seed=2)
    ax, ay = np.sort(rng.random(10)), np.sort(rng.random(10))
    grid = s.eval_grid([ax, ay])
    X, Y = np.meshgrid(ax, ay, indexing="ij")
    pts = s.forward(np.column_stack([X.ravel(), Y.ravel()])).reshape(10, 10)
    assert np.max(np.abs(grid - pts) / np.abs(pts)) <= 1e-14


def test_eval_grid_three_dims():
    s = Surrogate(3, 2, 3, seed=4)
    axes = [np.linspace(0, 1, n) for n in (4, 5, 6)]
    grid = s.eval_grid(axes)
    assert grid.shape == (4, 5, 6)
    assert grid[1, 2, 3] == pytest.approx(s.forward([axes[0][1], axes[1][2], axes[2][3]]), rel=1e-14)


def test_eval_grid_constant():
    s = Surrogate(2, 1, 4)
    for w in s.weights[0]:
        w[:] = 2.0
    assert_allclose(s.eval_grid([np.linspace(0, 1, 7)] * 2), 4.0, rtol=1e-15)


def test_eval_grid_does_not_expand_basis():
    s = Surrogate(2, 1, 10)
    t = np.linspace(0, 1, 1000)
    s.stats.clear()
    g = s.eval_grid([t, t])
    assert g.shape == (1000, 1000)
    # one basis evaluation per axis node, not per grid point
    assert s.stats["basis_points"] == 2000


def test_grad_grid_matches_grad_input():
    s = Surrogate(2, 2, 4, seed=3)
    t = np.linspace(0.05, 0.95, 6)
    G = s.grad_grid([t, t])
    X, Y = np.meshgrid(t, t, indexing="ij")
    pts = s.grad_input(np.column_stack([X.ravel(), Y.ravel()]))
    assert_allclose(G[0].ravel(), pts[:, 0], rtol=1e-13, atol=1e-14)
    assert_allclose(G[1].ravel(), pts[:, 1], rtol=1e-13, atol=1e-14)


def test_grid_cap():
    s = Surrogate(2, 1, 3)
    s.grid_cap = 100
    with pytest.raises(MemoryError):
        s.eval_grid([np.linspace(0, 1, 20)] * 2)


# ----------------------------------------------------------------------
# bookkeeping


@pytest.mark.parametrize("M,P,ne", [(1, 2, 6), (3, 8, 2), (1, 20, 40), (2, 3, 5)])
def test_parameter_count(M, P, ne):
    s = Surrogate(P, M, ne)
    assert s.parameter_count() == M * P * (ne + 2)
    assert s.get_params().size == s.parameter_count()


def test_parameter_count_mixed_grids_and_layers():
    s = Surrogate(2, 2, [[3, 5], [4, 4]], layers=2)
    assert s.parameter_count() == 2 * ((3 + 2) + (5 + 2) + (4 + 2) + (4 + 2))


def test_borehole_configuration_count():
    # four kernels per dimension, eight inputs, three modes
    assert Surrogate(8, 3, 2).parameter_count() == 96


def test_params_round_trip():
    rng = np.random.default_rng(11)
    s = random_surrogate(rng)
    theta = rng.normal(size=s.parameter_count())
    s.set_params(theta)
    assert_array_equal(s.get_params(), theta)
    with pytest.raises(ValueError):
        s.set_params(theta[:-1])


def test_copy_is_independent():
    s = Surrogate(2, 1, 3)
    c = s.copy()
    c.weights[0][0][:] = 9.0
    assert not np.any(s.weights[0][0] == 9.0)


def test_seed_determinism():
    assert_array_equal(Surrogate(4, 2, 3, seed=5).get_params(), Surrogate(4, 2, 3, seed=5).get_params())
    assert not np.array_equal(Surrogate(4, 2, 3, seed=5).get_params(), Surrogate(4, 2, 3, seed=6).get_params())


def test_init_output_level():
    s = Surrogate(5, 2, 4, init_noise=0.0, init_output=0.3)
    assert s.forward(np.full(5, 0.4)) == pytest.approx(0.3, rel=1e-12)


def test_inner_layer_starts_at_identity():
    one = Surrogate(2, 1, 4, seed=0)
    two = Surrogate(2, 1, [[4, 4], [4, 4]], layers=2, seed=0, init_noise=0.0)
    for p in range(2):
        two.weights[1][p][...] = one.weights[0][p]
    x = np.random.default_rng(12).random((20, 2))
    assert_allclose(two.forward(x), one.forward(x), rtol=1e-13)


def test_save_load_round_trip(tmp_path):
    s = Surrogate(3, 2, [2, 5, 3], seed=8)
    s.save(tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["format"] == "khronos-surrogate"
    t = Surrogate.load(tmp_path / "s.json")
    assert_array_equal(t.get_params(), s.get_params())
    x = np.random.default_rng(0).random((5, 3))
    assert_array_equal(t.forward(x), s.forward(x))


def test_load_rejects_other_documents():
    with pytest.raises(ValueError):
        Surrogate.from_dict({"format": "other"})


@pytest.mark.parametrize("kw", [dict(dims=0), dict(modes=0), dict(layers=0), dict(init_output=0.0)])
def test_constructor_validation(kw):
    args = dict(dims=2, modes=1, n_elements=3)
    args.update(kw)
    with pytest.raises(ValueError):
        Surrogate(**args)
