"""Uniform quadratic B-spline bases on the unit interval.

The knot vector is extended by two knots past each end of [0, 1] so that the
``n_elements + 2`` quadratic splines form a partition of unity over the whole
domain. Basis ``i`` is supported on ``[knots[i], knots[i + 3]]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "KnotGrid",
    "build_knots",
    "eval_basis",
    "eval_basis_deriv",
    "local_basis",
    "local_slopes",
    "basis_matrix",
]


@dataclass(frozen=True)
class KnotGrid:
    """Uniform extended knot vector over [0, 1].

    Attributes
    ----------
    n_elements : int
        Number of elements (segments) covering the domain.
    knots : numpy.ndarray
        ``n_elements + 5`` knots spanning ``[-2h, 1 + 2h]``.
    """

    n_elements: int
    knots: np.ndarray = field(repr=False, compare=False)

    @property
    def h(self) -> float:
        return 1.0 / self.n_elements

    @property
    def n_basis(self) -> int:
        return self.n_elements + 2


def build_knots(n_elements: int) -> KnotGrid:
    """Build the extended uniform knot grid with ``n_elements`` elements."""
    n_elements = int(n_elements)
    if n_elements < 1:
        raise ValueError(f"n_elements must be >= 1, got {n_elements}")
    # integer multiples keep knots[2] == 0 and knots[-3] == 1 exactly
    knots = np.arange(-2, n_elements + 3, dtype=np.float64) / n_elements
    knots.setflags(write=False)
    return KnotGrid(n_elements=n_elements, knots=knots)


def _check_domain(x: np.ndarray) -> None:
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        bad = x[~((x >= 0.0) & (x <= 1.0))]
        raise ValueError(f"basis evaluation requires x in [0, 1], got {bad[:5]}")


def local_basis(grid: KnotGrid, x, deriv: bool = False, check: bool = True):
    """Nonzero basis values at each point.

    Returns ``(first, vals)`` where ``first`` holds the index of the first
    nonzero basis at each point (equal to the element index) and ``vals`` has
    shape ``x.shape + (3,)`` with the values of bases ``first``, ``first + 1``
    and ``first + 2``. With ``deriv=True`` the derivatives are returned
    instead.
    """
    x = np.asarray(x, dtype=np.float64)
    if check:
        _check_domain(x)
    n = grid.n_elements
    s = x * n
    first = np.minimum(np.floor(s), n - 1).astype(np.intp)
    t = s - first
    vals = np.empty(x.shape + (3,), dtype=np.float64)
    if deriv:
        vals[..., 0] = (t - 1.0) * n
        vals[..., 1] = (1.0 - 2.0 * t) * n
        vals[..., 2] = t * n
    else:
        vals[..., 0] = 0.5 * (1.0 - t) ** 2
        vals[..., 2] = 0.5 * t * t
        vals[..., 1] = 1.0 - vals[..., 0] - vals[..., 2]
    return first, vals


def local_slopes(grid: KnotGrid, x, check: bool = True):
    """Derivative weights in difference form.

    A quadratic spline has ``f'(x) = sum_k (w[first+k+1] - w[first+k]) * s[..., k]``
    for ``k = 0, 1``, with ``s`` the two nonzero linear splines scaled by
    ``n_elements``. Equal weights therefore give an exactly zero slope.
    """
    x = np.asarray(x, dtype=np.float64)
    if check:
        _check_domain(x)
    n = grid.n_elements
    sx = x * n
    first = np.minimum(np.floor(sx), n - 1).astype(np.intp)
    t = sx - first
    slopes = np.empty(x.shape + (2,), dtype=np.float64)
    slopes[..., 0] = (1.0 - t) * n
    slopes[..., 1] = t * n
    return first, slopes


def basis_matrix(grid: KnotGrid, x, deriv: bool = False) -> np.ndarray:
    """Dense ``(len(x), n_basis)`` matrix of basis values (or derivatives)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    first, vals = local_basis(grid, x, deriv=deriv)
    out = np.zeros((x.size, grid.n_basis))
    rows = np.arange(x.size)
    for k in range(3):
        out[rows, first + k] = vals[:, k]
    return out


def eval_basis(grid: KnotGrid, x: float) -> np.ndarray:
    """All ``n_basis`` basis values at a scalar ``x`` in [0, 1]."""
    return basis_matrix(grid, float(x))[0]


def eval_basis_deriv(grid: KnotGrid, x: float) -> np.ndarray:
    """All ``n_basis`` basis derivatives at a scalar ``x`` in [0, 1]."""
    return basis_matrix(grid, float(x), deriv=True)[0]
