"""
Fitting a separable spline surrogate
====================================

A surrogate is a sum of modes, each a product of univariate quadratic
splines. Here we look at the basis on its own and then fit a small
regression problem.
"""

import numpy as np

from khronos import Surrogate
from khronos.basis import basis_matrix, build_knots
from khronos.regression import make_dataset, run_bench
from khronos.training import MSELoss, TrainConfig, train_cooperative

# ----------------------------------------------------------------------
# The basis: four elements give six quadratic B-splines on [0, 1].
# Three of them are nonzero at any point and they sum to one.
grid = build_knots(4)
x = np.linspace(0, 1, 9)
B = basis_matrix(grid, x)
print("basis values, one row per point:")
print(np.round(B, 3))
print("row sums:", B.sum(axis=1))

# ----------------------------------------------------------------------
# A product of two quadratics is represented by a single mode, so
# training drives the loss to round-off.
rng = np.random.default_rng(0)
pts = rng.random((2000, 2))
target = (0.5 + pts[:, 0] ** 2) * (1 + pts[:, 1] - 0.5 * pts[:, 1] ** 2)
s = Surrogate(2, modes=1, n_elements=4)
report = train_cooperative(s, TrainConfig(epochs=3000, lr_start=0.05, lr_end=1e-4), MSELoss(pts, target))
print(f"rank-one target: final MSE {report.final_loss:.2e} with {s.parameter_count()} weights")

# ----------------------------------------------------------------------
# The borehole function in eight inputs. A reduced sample keeps the demo
# quick; the acceptance suite runs the full 100,000-point version.
ds = make_dataset("borehole", 20_000, seed=0)
cfg = TrainConfig(epochs=100, lr_start=0.05, lr_end=0.001, batch=512, modes=3)
s, out, _ = run_bench(ds, 2, cfg)
print(f"borehole: test R2 {out['test_r2']:.5f}, test MSE {out['test_mse']:.2e}, {out['parameter_count']} weights")

# Input gradients come for free from the spline derivatives.
print("d(output)/d(input) at the centre:", np.round(s.grad_input(np.full((1, 8), 0.5))[0], 4))
