"""
Solving a Poisson problem by energy minimization
================================================

For a separable surrogate and a separable source the Ritz energy reduces
to small Gram matrices of univariate splines, so it is evaluated exactly
by Gauss-Legendre quadrature without any collocation points.
"""

import numpy as np

from khronos import Surrogate
from khronos.basis import basis_matrix, build_knots
from khronos.poisson import solve_poisson
from khronos.quadrature import SeparableFunction, assemble_grams, energy, gauss_nodes
from khronos.training import TrainConfig

# ----------------------------------------------------------------------
# Gauss-Legendre on [0, 1]: n nodes integrate polynomials up to degree 2n - 1.
xg, wg = gauss_nodes(3)
print("3-point rule integrates x^5 to", wg @ xg**5, "(exact 1/6)")

# ----------------------------------------------------------------------
# With no source the energy of x(1 - x) y(1 - y) is 1/90. Quadratic
# splines reproduce x(1 - x) exactly, so the Gram-matrix energy matches.
n = 4
grid = build_knots(n)
t = np.linspace(0, 1, 50)
w, *_ = np.linalg.lstsq(basis_matrix(grid, t), t * (1 - t), rcond=None)
s = Surrogate(2, 1, n)
s.weights[0][0][0] = w
s.weights[0][1][0] = w
zero = SeparableFunction([[lambda x: 0 * x, lambda y: 0 * y]])
print(f"energy {energy(assemble_grams(s, zero)):.15f} vs 1/90 = {1 / 90:.15f}")

# ----------------------------------------------------------------------
# The benchmark problem, solved at increasing numbers of weights. Errors
# are measured against the exact solution on a 1000 x 1000 grid.
cfg = TrainConfig(epochs=1000, lr_start=0.05, lr_end=1e-4)
rows = []
for dof in (16, 32, 64):
    _, m, _ = solve_poisson(dof, cfg)
    rows.append(m)
    print(f"dof {dof:4d}: L2sq {m['L2sq']:.2e}  H1sq {m['H1sq']:.2e}  ({m['wall_time_s']:.1f} s)")
slope = np.polyfit(np.log([r["dof"] for r in rows]), np.log([r["L2sq"] for r in rows]), 1)[0]
print(f"log-log slope of L2sq against dof: {slope:.1f}")
