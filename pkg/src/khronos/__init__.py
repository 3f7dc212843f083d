"""Separable B-spline kernel-expansion surrogates."""

import os as _os

# KHRONOS_NUM_THREADS caps BLAS threads; it only takes effect if set
# before numpy is first imported
if _os.environ.get("KHRONOS_NUM_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["KHRONOS_NUM_THREADS"])

from .basis import KnotGrid, build_knots, eval_basis, eval_basis_deriv  # noqa: E402
from .model import Surrogate  # noqa: E402

__version__ = "0.1.0"

__all__ = ["KnotGrid", "build_knots", "eval_basis", "eval_basis_deriv", "Surrogate", "__version__"]
