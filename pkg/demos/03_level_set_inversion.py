"""
Recovering a level set by batched Gauss-Newton
==============================================

Once trained, the surrogate has cheap input gradients. Many starting
points are pushed onto the zero level set at once, each independently.
"""

import numpy as np

from khronos.inversion import InversionJob, invert_batch, make_inversion_toy
from khronos.regression import lhs_sample

# ----------------------------------------------------------------------
# Fit a two-mode surrogate to an oscillatory field on the unit square.
field, s, info = make_inversion_toy()
print(f"surrogate held-out MSE {info['test_mse']:.1e} with {info['parameter_count']} weights")

# ----------------------------------------------------------------------
# Ten Gauss-Newton steps from Latin hypercube starting points.
for b in (500, 2000, 8000):
    x0 = lhs_sample(b, 2, np.random.SeedSequence([0, b]))
    res = invert_batch(s, InversionJob(0.0, x0, max_iters=10))
    r = res.summary()
    print(f"batch {b:5d}: failures {r['failure_pct']:.2f}%  rmse {r['rmse']:.1e}  {r['per_point_us']:.1f} us/point")

# The median residual shrinks at every iteration.
print("median residual per iteration:", np.array2string(np.asarray(res.median_history), precision=1))

# Recovered points lie on the zero set of the surrogate, which is close
# to the zero set of the true field.
pts = res.final_points[res.converged]
print(f"max |field| at recovered points: {np.max(np.abs(field(pts[:, 0], pts[:, 1]))):.1e}")
