"""Separable kernel-expansion surrogate.

The surrogate is a superposition of ``modes`` rank-one terms. Each term is a
product over input dimensions of a univariate feature map, and each feature
map is a stack of ``layers`` quadratic B-spline expansions::

    u(x) = sum_j prod_p f_{p,j}(x_p)
    f_{p,j} = K_L(clip(... K_2(clip(K_1(x_p))) ...))

Weights are stored per layer and dimension as arrays of shape
``(modes, n_basis)`` so all modes of one dimension are evaluated together.
"""

from __future__ import annotations

import json
from collections import Counter
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .basis import KnotGrid, build_knots, local_basis, local_slopes

__all__ = ["Surrogate", "FORMAT_NAME"]

FORMAT_NAME = "khronos-surrogate"
DEFAULT_GRID_CAP = 50_000_000


def _greville(grid: KnotGrid) -> np.ndarray:
    # control points reproducing f(x) = x exactly
    return 0.5 * (grid.knots[1:-2] + grid.knots[2:-1])


class BasisTable(NamedTuple):
    """Basis values of one dimension at fixed inputs.

    ``mat`` is the ``(n, n_basis)`` CSR matrix of basis values (three entries
    per row). ``dmat`` is the ``(n, n_basis - 1)`` CSR matrix of derivative
    weights acting on weight differences (two entries per row); see
    :func:`khronos.basis.local_slopes`.
    """

    first: np.ndarray
    vals: np.ndarray
    slopes: np.ndarray
    mat: sp.csr_matrix
    dmat: sp.csr_matrix

    @classmethod
    def build(cls, grid: KnotGrid, x: np.ndarray, check: bool = True) -> "BasisTable":
        first, vals = local_basis(grid, x, check=check)
        _, slopes = local_slopes(grid, x, check=False)
        n = x.size
        mat = sp.csr_matrix(
            (vals.ravel(), (first[:, None] + np.arange(3)).ravel(), np.arange(0, 3 * n + 1, 3)),
            shape=(n, grid.n_basis),
        )
        dmat = sp.csr_matrix(
            (slopes.ravel(), (first[:, None] + np.arange(2)).ravel(), np.arange(0, 2 * n + 1, 2)),
            shape=(n, grid.n_basis - 1),
        )
        return cls(first, vals, slopes, mat, dmat)

    def subset(self, idx) -> "BasisTable":
        return BasisTable(
            self.first[idx], self.vals[idx], self.slopes[idx], self.mat[idx], self.dmat[idx]
        )


def _gather(w: np.ndarray, first: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Evaluate sum_k w[m, first + k] * vals[..., k] for every mode ``m``.

    ``first``/``vals`` either carry a leading mode axis (inner layers) or are
    shared by all modes (first layer).
    """
    if first.ndim == 1:
        return (
            w[:, first] * vals[:, 0]
            + w[:, first + 1] * vals[:, 1]
            + w[:, first + 2] * vals[:, 2]
        )
    out = np.take_along_axis(w, first, axis=1) * vals[..., 0]
    out += np.take_along_axis(w, first + 1, axis=1) * vals[..., 1]
    out += np.take_along_axis(w, first + 2, axis=1) * vals[..., 2]
    return out


def _gather_slope(w: np.ndarray, first: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    """Inner-layer derivative from weight differences (``first`` has a mode axis)."""
    w0 = np.take_along_axis(w, first, axis=1)
    w1 = np.take_along_axis(w, first + 1, axis=1)
    w2 = np.take_along_axis(w, first + 2, axis=1)
    return (w1 - w0) * slopes[..., 0] + (w2 - w1) * slopes[..., 1]


def _scatter(g: np.ndarray, first: np.ndarray, vals: np.ndarray, n_basis: int) -> np.ndarray:
    """Adjoint of :func:`_gather`: accumulate ``g * vals`` into basis slots."""
    modes = g.shape[0]
    offs = (np.arange(modes) * n_basis)[:, None]
    idx = np.broadcast_to(first, g.shape) + offs
    contrib = g[..., None] * vals
    flat = np.concatenate([(idx + k).ravel() for k in range(3)])
    wts = np.concatenate([contrib[..., k].ravel() for k in range(3)])
    return np.bincount(flat, weights=wts, minlength=modes * n_basis).reshape(modes, n_basis)


class Surrogate:
    """Sum of separable modes built from per-dimension B-spline expansions.

    Parameters
    ----------
    dims : int
        Number of input dimensions.
    modes : int
        Number of superposed rank-one modes.
    n_elements : int or sequence
        Elements per dimension. A scalar applies to every dimension and
        layer; a flat sequence of length ``dims`` gives one value per
        dimension; a nested ``[layer][dim]`` sequence sets each layer.
    layers : int
        Number of stacked expansions per feature map.
    seed : int or numpy.random.Generator, optional
        Source of the initialization noise.
    init_noise : float
        Half-width of the uniform noise added to the initial weights,
        relative to their level.
    init_output : float, optional
        Approximate value of the surrogate at initialization. Each outer
        feature map starts near ``(init_output / modes) ** (1 / dims)``.
        Must be positive; defaults to 1.
    """

    def __init__(
        self,
        dims: int,
        modes: int = 1,
        n_elements: int | Sequence = 4,
        layers: int = 1,
        seed=0,
        init_noise: float = 0.05,
        init_output: float = 1.0,
    ):
        if dims < 1 or modes < 1 or layers < 1:
            raise ValueError("dims, modes and layers must all be >= 1")
        if not init_output > 0:
            raise ValueError("init_output must be positive")
        self.dims = int(dims)
        self.modes = int(modes)
        self.layers = int(layers)
        self.grids = self._make_grids(n_elements)
        self.init_output = float(init_output)
        self.stats: Counter = Counter()
        self.grid_cap = DEFAULT_GRID_CAP
        rng = np.random.default_rng(seed)
        # equal factors whose products sum to init_output over the modes
        level = (init_output / self.modes) ** (1.0 / self.dims)
        self.weights: list[list[np.ndarray]] = []
        for l in range(self.layers):
            row = []
            for p in range(self.dims):
                g = self.grids[l][p]
                noise = rng.uniform(-init_noise, init_noise, size=(self.modes, g.n_basis))
                if l == self.layers - 1:
                    base = np.full((self.modes, g.n_basis), level)
                    noise *= level
                else:
                    # inner layers start near the identity map
                    base = np.tile(_greville(g), (self.modes, 1))
                row.append(base + noise)
            self.weights.append(row)

    def _make_grids(self, n_elements) -> list[list[KnotGrid]]:
        ne = np.asarray(n_elements, dtype=object)
        if ne.ndim == 0:
            table = [[int(n_elements)] * self.dims for _ in range(self.layers)]
        elif ne.ndim == 1:
            if len(ne) != self.dims:
                raise ValueError(f"expected {self.dims} element counts, got {len(ne)}")
            table = [[int(v) for v in n_elements] for _ in range(self.layers)]
        else:
            table = [[int(v) for v in row] for row in n_elements]
            if len(table) != self.layers or any(len(r) != self.dims for r in table):
                raise ValueError("nested n_elements must have shape (layers, dims)")
        return [[build_knots(v) for v in row] for row in table]

    # ------------------------------------------------------------------
    # bookkeeping

    @property
    def n_elements(self) -> list[list[int]]:
        return [[g.n_elements for g in row] for row in self.grids]

    def parameter_count(self) -> int:
        return self.modes * sum(g.n_basis for row in self.grids for g in row)

    def copy(self) -> "Surrogate":
        new = object.__new__(Surrogate)
        new.dims, new.modes, new.layers = self.dims, self.modes, self.layers
        new.grids = self.grids
        new.init_output = self.init_output
        new.stats = Counter()
        new.grid_cap = self.grid_cap
        new.weights = [[w.copy() for w in row] for row in self.weights]
        return new

    def get_params(self) -> np.ndarray:
        """Flat weight vector in mode, dimension, layer, basis order."""
        out = []
        for j in range(self.modes):
            for p in range(self.dims):
                for l in range(self.layers):
                    out.append(self.weights[l][p][j])
        return np.concatenate(out)

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.parameter_count():
            raise ValueError(f"expected {self.parameter_count()} weights, got {flat.size}")
        pos = 0
        for j in range(self.modes):
            for p in range(self.dims):
                for l in range(self.layers):
                    nb = self.grids[l][p].n_basis
                    self.weights[l][p][j] = flat[pos : pos + nb]
                    pos += nb

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for row in self.weights for w in row)

    # ------------------------------------------------------------------
    # evaluation

    def _points(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.dims:
            raise ValueError(f"expected points with {self.dims} coordinates, got shape {x.shape}")
        return x, single

    def tables(self, x) -> list[BasisTable]:
        """First-layer basis tables for each dimension.

        The tables depend only on the inputs, so training loops compute them
        once and pass them to :meth:`evaluate`.
        """
        x, _ = self._points(x)
        self.stats["basis_points"] += x.size
        return [BasisTable.build(self.grids[0][p], x[:, p]) for p in range(self.dims)]

    def _chain(self, p: int, table, need_deriv: bool):
        """Run dimension ``p`` through all layers.

        Returns the ``(modes, n)`` feature values, the per-layer caches for the
        backward pass, and (if requested) d f / d x_p.
        """
        w = self.weights[0][p]
        f = (table.mat @ w.T).T
        caches = [table]
        df = (table.dmat @ np.diff(w, axis=1).T).T if need_deriv else None
        for l in range(1, self.layers):
            g = self.grids[l][p]
            inside = (f >= 0.0) & (f <= 1.0)
            u = np.clip(f, 0.0, 1.0)
            fl, vl = local_basis(g, u, check=False)
            _, sl = local_slopes(g, u, check=False)
            wl = self.weights[l][p]
            dlayer = _gather_slope(wl, fl, sl) * inside
            caches.append((fl, vl, dlayer))
            if need_deriv:
                df = df * dlayer
            f = _gather(wl, fl, vl)
        return f, caches, df

    def evaluate(self, tables, need_deriv: bool = False, need_cache: bool = False):
        """Forward pass from precomputed tables.

        Returns a dict with ``u`` (n,), ``F`` (dims, modes, n) feature values,
        and optionally ``dF`` (feature derivatives) and ``caches``.
        """
        feats, derivs, caches = [], [], []
        for p in range(self.dims):
            f, c, df = self._chain(p, tables[p], need_deriv)
            feats.append(f)
            derivs.append(df)
            caches.append(c)
        F = np.stack(feats)
        modes = np.prod(F, axis=0)
        out = {"u": modes.sum(axis=0), "F": F, "modes": modes}
        if need_deriv:
            out["dF"] = np.stack(derivs)
        if need_cache:
            out["caches"] = caches
        return out

    @staticmethod
    def _others(F: np.ndarray) -> np.ndarray:
        """prod_{q != p} F[q] for every p, without division."""
        P = F.shape[0]
        left = np.ones_like(F)
        right = np.ones_like(F)
        for p in range(1, P):
            left[p] = left[p - 1] * F[p - 1]
        for p in range(P - 2, -1, -1):
            right[p] = right[p + 1] * F[p + 1]
        return left * right

    def forward(self, x):
        """Surrogate value at one point ``(dims,)`` or a batch ``(n, dims)``."""
        x, single = self._points(x)
        u = self.evaluate(self.tables(x))["u"]
        return float(u[0]) if single else u

    __call__ = forward

    def feature_map(self, mode: int, dim: int, xp):
        """Univariate feature map ``f_{dim,mode}`` at scalar or array ``xp``."""
        xp = np.asarray(xp, dtype=np.float64)
        flat = np.atleast_1d(xp)
        table = BasisTable.build(self.grids[0][dim], flat)
        f, _, _ = self._chain(dim, table, need_deriv=False)
        out = f[mode]
        return float(out[0]) if xp.ndim == 0 else out

    def feature_deriv(self, mode: int, dim: int, xp):
        """Derivative of :meth:`feature_map` with respect to its input."""
        xp = np.asarray(xp, dtype=np.float64)
        flat = np.atleast_1d(xp)
        table = BasisTable.build(self.grids[0][dim], flat)
        _, _, df = self._chain(dim, table, need_deriv=True)
        out = df[mode]
        return float(out[0]) if xp.ndim == 0 else out

    def grad_input(self, x):
        """Gradient of the surrogate with respect to its inputs."""
        x, single = self._points(x)
        res = self.evaluate(self.tables(x), need_deriv=True)
        grad = np.einsum("pmn,pmn->np", res["dF"], self._others(res["F"]))
        return grad[0] if single else grad

    def backward(self, res, upstream) -> list[list[np.ndarray]]:
        """Weight gradients of ``sum_i upstream_i * u(x_i)``.

        ``res`` must come from :meth:`evaluate` with ``need_cache=True``.
        """
        upstream = np.asarray(upstream, dtype=np.float64)
        others = self._others(res["F"])
        grads = [[None] * self.dims for _ in range(self.layers)]
        for p in range(self.dims):
            g = others[p] * upstream
            caches = res["caches"][p]
            for l in range(self.layers - 1, 0, -1):
                first, vals, dlayer = caches[l]
                grads[l][p] = _scatter(g, first, vals, self.grids[l][p].n_basis)
                g = g * dlayer
            grads[0][p] = np.asarray(g @ caches[0].mat)
        return grads

    def grad_params(self, x, upstream=1.0) -> list[list[np.ndarray]]:
        """Gradient of ``sum_i upstream_i * u(x_i)`` with respect to every weight.

        The result mirrors :attr:`weights`: ``[layer][dim]`` arrays of shape
        ``(modes, n_basis)``.
        """
        x, _ = self._points(x)
        res = self.evaluate(self.tables(x), need_cache=True)
        up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (x.shape[0],))
        return self.backward(res, up)

    def eval_grid(self, axes: Sequence) -> np.ndarray:
        """Evaluate on the tensor grid spanned by one axis vector per dimension.

        Each feature map is evaluated once per axis node; the modes are then
        formed by broadcasting products, so no per-node basis vectors exist.
        """
        if len(axes) != self.dims:
            raise ValueError(f"expected {self.dims} axes, got {len(axes)}")
        axes = [np.atleast_1d(np.asarray(a, dtype=np.float64)) for a in axes]
        shape = tuple(a.size for a in axes)
        size = self.modes * int(np.prod(shape, dtype=np.int64))
        if size > self.grid_cap:
            raise MemoryError(
                f"grid of {shape} with {self.modes} modes exceeds cap of {self.grid_cap} values"
            )
        acc = None
        for p, a in enumerate(axes):
            self.stats["basis_points"] += a.size
            f, _, _ = self._chain(p, BasisTable.build(self.grids[0][p], a), need_deriv=False)
            f = f.reshape((self.modes,) + (1,) * p + (a.size,) + (1,) * (self.dims - p - 1))
            acc = f if acc is None else acc * f
        return np.broadcast_to(acc, (self.modes,) + shape).sum(axis=0)

    def grad_grid(self, axes: Sequence) -> np.ndarray:
        """Input gradient on a tensor grid, shape ``(dims,) + grid shape``."""
        axes = [np.atleast_1d(np.asarray(a, dtype=np.float64)) for a in axes]
        shape = tuple(a.size for a in axes)
        if self.dims * self.modes * int(np.prod(shape, dtype=np.int64)) > self.grid_cap:
            raise MemoryError(f"gradient grid of {shape} exceeds cap of {self.grid_cap} values")
        F, dF = [], []
        for p, a in enumerate(axes):
            f, _, df = self._chain(p, BasisTable.build(self.grids[0][p], a), need_deriv=True)
            view = (self.modes,) + (1,) * p + (a.size,) + (1,) * (self.dims - p - 1)
            F.append(f.reshape(view))
            dF.append(df.reshape(view))
        out = np.empty((self.dims,) + shape)
        for p in range(self.dims):
            acc = dF[p]
            for q in range(self.dims):
                if q != p:
                    acc = acc * F[q]
            out[p] = np.broadcast_to(acc, (self.modes,) + shape).sum(axis=0)
        return out

    # ------------------------------------------------------------------
    # serialization

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": 1,
            "dims": self.dims,
            "modes": self.modes,
            "layers": self.layers,
            "n_elements": self.n_elements,
            "weights": self.get_params().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Surrogate":
        if d.get("format") != FORMAT_NAME:
            raise ValueError(f"not a {FORMAT_NAME} document")
        s = cls(d["dims"], d["modes"], d["n_elements"], layers=d["layers"], init_noise=0.0)
        s.set_params(np.array(d["weights"], dtype=np.float64))
        return s

    def save(self, path) -> None:
        """Write the surrogate as JSON; floats round-trip exactly."""
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Surrogate":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __repr__(self) -> str:
        return (
            f"Surrogate(dims={self.dims}, modes={self.modes}, layers={self.layers}, "
            f"n_elements={self.n_elements}, params={self.parameter_count()})"
        )
