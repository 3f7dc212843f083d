"""Separable integration for the two-dimensional Poisson energy.

For a rank-``M`` surrogate ``u(x, y) = sum_m g_m(x) h_m(y)`` and a rank-``N``
source ``f(x, y) = sum_i fx_i(x) fy_i(y)`` the energy

    E(u) = int int (0.5 |grad u|^2 - f u) dx dy

reduces to one-dimensional inner products collected in Gram matrices::

    E = 0.5 * (tr(G'^T H) + tr(H'^T G)) - tr(A^T B)

Every inner product is a sum of per-element Gauss-Legendre rules.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .basis import KnotGrid, basis_matrix
from .model import Surrogate

__all__ = [
    "gauss_nodes",
    "QuadratureRule",
    "univariate_inner",
    "SeparableFunction",
    "GramSet",
    "assemble_grams",
    "energy",
    "energy_grad",
    "EnergyFunctional",
    "apply_dirichlet",
    "dirichlet_free_params",
    "dirichlet_full_params",
    "dirichlet_reduce_grad",
    "OPS",
]

# instrumentation: multiply-adds performed by assemble_grams
OPS: Counter = Counter()


def gauss_nodes(n_gauss: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on the reference element [0, 1]."""
    if not 1 <= int(n_gauss) <= 10:
        raise ValueError(f"n_gauss must be in [1, 10], got {n_gauss}")
    x, w = np.polynomial.legendre.leggauss(int(n_gauss))
    return 0.5 * (x + 1.0), 0.5 * w


class QuadratureRule:
    """Composite Gauss-Legendre rule over the elements of a knot grid.

    Nodes are laid out element by element; ``nodes.size == n_gauss * n_e``.
    """

    def __init__(self, grid: KnotGrid, n_gauss: int = 3):
        self.grid = grid
        self.n_gauss = int(n_gauss)
        ref_x, ref_w = gauss_nodes(self.n_gauss)
        h = grid.h
        left = np.arange(grid.n_elements) * h
        self.nodes = (left[:, None] + h * ref_x[None, :]).ravel()
        self.weights = np.tile(h * ref_w, grid.n_elements)
        self._phi = None
        self._dphi = None

    @property
    def phi(self) -> np.ndarray:
        """Basis values at the nodes, ``(n_nodes, n_basis)``."""
        if self._phi is None:
            self._phi = basis_matrix(self.grid, self.nodes)
        return self._phi

    @property
    def dphi(self) -> np.ndarray:
        if self._dphi is None:
            self._dphi = basis_matrix(self.grid, self.nodes, deriv=True)
        return self._dphi

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def univariate_inner(rule: QuadratureRule, fa: Callable, fb: Callable) -> float:
    """Approximate ``int_0^1 fa(x) fb(x) dx`` with the composite rule."""
    x = rule.nodes
    return rule.integrate(np.asarray(fa(x)) * np.asarray(fb(x)))


@dataclass
class SeparableFunction:
    """Sum of products of univariate factors.

    ``factors[i][p]`` is the factor of term ``i`` in dimension ``p``; each
    must accept and return numpy arrays.
    """

    factors: Sequence[Sequence[Callable]]

    @property
    def rank(self) -> int:
        return len(self.factors)

    @property
    def dims(self) -> int:
        return len(self.factors[0])

    def __call__(self, *coords):
        coords = [np.asarray(c, dtype=np.float64) for c in coords]
        total = 0.0
        for term in self.factors:
            prod = 1.0
            for fac, c in zip(term, coords):
                prod = prod * fac(c)
            total = total + prod
        return total


@dataclass
class GramSet:
    G: np.ndarray
    dG: np.ndarray
    H: np.ndarray
    dH: np.ndarray
    A: np.ndarray
    B: np.ndarray


def _rules(s: Surrogate, n_gauss: int, n_gauss_source: int):
    gx, gy = s.grids[0]
    return (
        QuadratureRule(gx, n_gauss),
        QuadratureRule(gy, n_gauss),
        QuadratureRule(gx, n_gauss_source),
        QuadratureRule(gy, n_gauss_source),
    )


def _check_2d(s: Surrogate, f: SeparableFunction | None = None) -> None:
    if s.dims != 2:
        raise ValueError(f"separable energy is implemented for 2 dimensions, got {s.dims}")
    if s.layers != 1:
        raise ValueError("separable energy requires single-layer feature maps")
    if f is not None and f.dims != 2:
        raise ValueError(f"source must be bivariate, got {f.dims} factors per term")


def _weighted_gram(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    # a: (M, n), b: (K, n) sampled at nodes with weights w
    OPS["gram"] += a.shape[0] * b.shape[0] * a.shape[1]
    return (a * w) @ b.T


class EnergyFunctional:
    """Cached separable energy for a fixed 2D surrogate layout and source.

    The basis tables at the quadrature nodes and the source projections
    ``int B_a fx_i`` are computed once; each evaluation then costs a few
    small matrix products.
    """

    def __init__(self, s: Surrogate, f: SeparableFunction, n_gauss: int = 3, n_gauss_source: int = 5):
        _check_2d(s, f)
        self.n_gauss = n_gauss
        self.n_gauss_source = n_gauss_source
        self.rx, self.ry, self.sx, self.sy = _rules(s, n_gauss, n_gauss_source)
        self.f = f
        # (n_basis, N): inner products of each basis with each source factor
        fx = np.stack([term[0](self.sx.nodes) for term in f.factors])
        fy = np.stack([term[1](self.sy.nodes) for term in f.factors])
        self.px = (self.sx.phi * self.sx.weights[:, None]).T @ fx.T
        self.py = (self.sy.phi * self.sy.weights[:, None]).T @ fy.T
        # basis mass and stiffness matrices
        self.kx0 = (self.rx.phi * self.rx.weights[:, None]).T @ self.rx.phi
        self.kx1 = (self.rx.dphi * self.rx.weights[:, None]).T @ self.rx.dphi
        self.ky0 = (self.ry.phi * self.ry.weights[:, None]).T @ self.ry.phi
        self.ky1 = (self.ry.dphi * self.ry.weights[:, None]).T @ self.ry.dphi

    def grams(self, s: Surrogate) -> GramSet:
        wx, wy = s.weights[0]
        g, dg = wx @ self.rx.phi.T, wx @ self.rx.dphi.T
        h, dh = wy @ self.ry.phi.T, wy @ self.ry.dphi.T
        OPS["eval"] += 2 * wx.shape[0] * (self.rx.nodes.size + self.ry.nodes.size)
        gs = GramSet(
            G=_weighted_gram(g, g, self.rx.weights),
            dG=_weighted_gram(dg, dg, self.rx.weights),
            H=_weighted_gram(h, h, self.ry.weights),
            dH=_weighted_gram(dh, dh, self.ry.weights),
            A=wx @ self.px,
            B=wy @ self.py,
        )
        OPS["source"] += wx.shape[0] * self.f.rank * (self.sx.nodes.size + self.sy.nodes.size)
        return gs

    def value_and_grad(self, s: Surrogate):
        """Energy and its gradient, ``[[grad_wx, grad_wy]]`` like the weights."""
        wx, wy = s.weights[0]
        gs = self.grams(s)
        # G' = Wx K1 Wx^T, so d/dWx tr(G'^T H) = 2 H Wx K1
        gx = gs.H @ wx @ self.kx1 + gs.dH @ wx @ self.kx0 - gs.B @ self.px.T
        gy = gs.G @ wy @ self.ky1 + gs.dG @ wy @ self.ky0 - gs.A @ self.py.T
        return energy(gs), [[gx, gy]]


def assemble_grams(
    s: Surrogate,
    f: SeparableFunction,
    rule: QuadratureRule | None = None,
    n_gauss_source: int = 5,
) -> GramSet:
    """Gram matrices of the surrogate's feature maps and source projections.

    ``rule`` fixes the number of Gauss points for the feature-map Gram
    matrices (default 3, exact for products of quadratic splines); the
    projections onto the source factors use ``n_gauss_source`` points.
    """
    _check_2d(s, f)
    n_gauss = 3 if rule is None else rule.n_gauss
    return EnergyFunctional(s, f, n_gauss, n_gauss_source).grams(s)


def energy(gs: GramSet) -> float:
    """``0.5 * (tr(G'^T H) + tr(H'^T G)) - tr(A^T B)``."""
    if gs.G.shape != gs.H.shape or gs.dG.shape != gs.dH.shape or gs.A.shape != gs.B.shape:
        raise ValueError("inconsistent Gram matrix shapes")
    # tr(X^T Y) == sum(X * Y)
    return float(0.5 * (np.sum(gs.dG * gs.H) + np.sum(gs.dH * gs.G)) - np.sum(gs.A * gs.B))


def energy_grad(
    s: Surrogate,
    f: SeparableFunction,
    rule: QuadratureRule | None = None,
    n_gauss_source: int = 5,
) -> list[list[np.ndarray]]:
    """Gradient of the energy with respect to every weight of ``s``."""
    n_gauss = 3 if rule is None else rule.n_gauss
    return EnergyFunctional(s, f, n_gauss, n_gauss_source).value_and_grad(s)[1]


# ----------------------------------------------------------------------
# homogeneous Dirichlet conditions by elimination
#
# At x = 0 only the first two splines are nonzero, each equal to 1/2, so
# f(0) = (w_0 + w_1) / 2. Tying w_0 = -w_1 (and w_{n-1} = -w_{n-2}) makes
# every feature map vanish exactly at both ends.


def apply_dirichlet(s: Surrogate) -> None:
    """Overwrite the end weights so every feature map vanishes at 0 and 1."""
    for row in s.weights:
        for w in row:
            w[:, 0] = -w[:, 1]
            w[:, -1] = -w[:, -2]


def dirichlet_free_params(s: Surrogate) -> list[list[np.ndarray]]:
    return [[w[:, 1:-1].copy() for w in row] for row in s.weights]


def dirichlet_full_params(free: list[list[np.ndarray]]) -> list[list[np.ndarray]]:
    out = []
    for row in free:
        new = []
        for v in row:
            new.append(np.concatenate([-v[:, :1], v, -v[:, -1:]], axis=1))
        out.append(new)
    return out


def dirichlet_reduce_grad(grads: list[list[np.ndarray]]) -> list[list[np.ndarray]]:
    """Chain rule from full-weight gradients to the free interior weights."""
    out = []
    for row in grads:
        new = []
        for g in row:
            r = g[:, 1:-1].copy()
            r[:, 0] -= g[:, 0]
            r[:, -1] -= g[:, -1]
            new.append(r)
        out.append(new)
    return out
