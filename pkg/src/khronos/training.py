"""Losses, optimizer and training loops."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import Surrogate
from .quadrature import (
    EnergyFunctional,
    SeparableFunction,
    apply_dirichlet,
    dirichlet_free_params,
    dirichlet_full_params,
    dirichlet_reduce_grad,
    energy,
)

__all__ = [
    "TrainingError",
    "TrainConfig",
    "TrainReport",
    "cosine_lr",
    "Adam",
    "MSELoss",
    "EnergyLoss",
    "MixedLoss",
    "mse_loss",
    "mixed_loss",
    "train_cooperative",
    "train_sequential",
]

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6


class TrainingError(RuntimeError):
    """Raised on non-finite gradients or a diverging loss."""


@dataclass
class TrainConfig:
    """Optimizer and mode-strategy settings.

    ``strategy`` is ``"cooperative"`` (``modes`` trained jointly) or
    ``"sequential"`` (one mode at a time until the training residual RMS
    drops below ``tol`` or ``max_modes`` is reached). ``batch=None`` means
    full-batch gradients.
    """

    epochs: int = 1000
    lr_start: float = 0.15
    lr_end: float = 0.05
    batch: int | None = None
    seed: int = 0
    strategy: str = "cooperative"
    modes: int = 1
    tol: float = 1e-6
    max_modes: int = 8
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr_start >= self.lr_end > 0:
            raise ValueError("learning rates must satisfy lr_start >= lr_end > 0")
        if self.strategy not in ("cooperative", "sequential"):
            raise ValueError(f"unknown mode strategy {self.strategy!r}")
        if self.strategy == "sequential" and not self.tol > 0:
            raise ValueError("sequential learning needs tol > 0")
        if self.batch is not None and self.batch < 1:
            raise ValueError("batch must be positive or None")


@dataclass
class TrainReport:
    loss_history: list[float] = field(default_factory=list)
    lr_history: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    final_loss: float = float("nan")
    modes_used: int = 0
    parameter_count: int = 0
    converged: bool = True
    residual_norms: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "final_loss": self.final_loss,
            "wall_time": self.wall_time,
            "modes_used": self.modes_used,
            "parameter_count": self.parameter_count,
            "epochs": len(self.loss_history),
            "converged": self.converged,
            "residual_norms": self.residual_norms,
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "lr", "loss"])
            for i, (lr, loss) in enumerate(zip(self.lr_history, self.loss_history)):
                w.writerow([i, repr(lr), repr(loss)])

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2))


def cosine_lr(epoch: int, total: int, lr_start: float, lr_end: float) -> float:
    """Cosine decay from ``lr_start`` at epoch 0 to ``lr_end`` at ``total - 1``."""
    if total < 2:
        return lr_start
    if not 0 <= epoch < total:
        raise ValueError(f"epoch {epoch} outside [0, {total})")
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * epoch / (total - 1)))


class Adam:
    """Adam with bias correction acting in place on a list of arrays."""

    def __init__(self, params: list[np.ndarray], betas=(0.9, 0.999), eps: float = 1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient at Adam step {self.t + 1}")
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ----------------------------------------------------------------------
# losses


class MSELoss:
    """Mean squared error over a fixed design ``x`` with targets ``y``.

    Basis tables for ``x`` are computed on first use and reused.
    """

    has_data = True

    def __init__(self, x, y):
        self.x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        self.y = np.asarray(y, dtype=np.float64).ravel()
        if self.y.size == 0:
            raise ValueError("empty dataset")
        if self.x.shape[0] != self.y.size:
            raise ValueError(f"{self.x.shape[0]} inputs but {self.y.size} targets")
        self._tables = None
        self._owner = None

    def _get_tables(self, s: Surrogate, idx=None):
        if self._tables is None or self._owner != s.n_elements:
            self._tables = s.tables(self.x)
            self._owner = s.n_elements
        if idx is None:
            return self._tables
        return [t.subset(idx) for t in self._tables]

    def shuffled(self, s: Surrogate, order) -> "MSELoss":
        """Copy with rows permuted by ``order``, so batches are cheap slices."""
        tables = self._get_tables(s, order)
        out = object.__new__(MSELoss)
        out.x, out.y = self.x[order], self.y[order]
        out._tables, out._owner = tables, self._owner
        return out

    def value(self, s: Surrogate, idx=None) -> float:
        res = s.evaluate(self._get_tables(s, idx))
        y = self.y if idx is None else self.y[idx]
        return float(np.mean((res["u"] - y) ** 2))

    def value_and_grad(self, s: Surrogate, idx=None):
        res = s.evaluate(self._get_tables(s, idx), need_cache=True)
        y = self.y if idx is None else self.y[idx]
        r = res["u"] - y
        loss = float(np.mean(r * r))
        return loss, s.backward(res, 2.0 * r / r.size)

    def residual_rms(self, s: Surrogate) -> float:
        return math.sqrt(self.value(s))

    @property
    def size(self) -> int:
        return self.y.size


class EnergyLoss:
    """Separable Poisson energy of a 2D surrogate against a separable source."""

    has_data = False
    size = None

    def __init__(self, source: SeparableFunction, n_gauss: int = 3, n_gauss_source: int = 5):
        self.source = source
        self.n_gauss = n_gauss
        self.n_gauss_source = n_gauss_source
        self._fn = None
        self._owner = None

    def _functional(self, s: Surrogate) -> EnergyFunctional:
        if self._fn is None or self._owner != s.n_elements:
            self._fn = EnergyFunctional(s, self.source, self.n_gauss, self.n_gauss_source)
            self._owner = s.n_elements
        return self._fn

    def value(self, s: Surrogate, idx=None) -> float:
        return energy(self._functional(s).grams(s))

    def value_and_grad(self, s: Surrogate, idx=None):
        return self._functional(s).value_and_grad(s)


class MixedLoss:
    """``alpha_data * mse + alpha_model * energy``."""

    def __init__(self, data: MSELoss, model: EnergyLoss, alpha_data: float = 1.0, alpha_model: float = 1.0):
        if alpha_data == 0 and alpha_model == 0:
            raise ValueError("at least one of alpha_data, alpha_model must be nonzero")
        self.data = data
        self.model = model
        self.alpha_data = float(alpha_data)
        self.alpha_model = float(alpha_model)

    has_data = True

    @property
    def size(self):
        return self.data.size

    def value(self, s: Surrogate, idx=None) -> float:
        return self.value_and_grad(s, idx)[0]

    def value_and_grad(self, s: Surrogate, idx=None):
        ld, gd = self.data.value_and_grad(s, idx)
        lm, gm = self.model.value_and_grad(s)
        loss = self.alpha_data * ld + self.alpha_model * lm
        grads = [
            [self.alpha_data * a + self.alpha_model * b for a, b in zip(ra, rb)]
            for ra, rb in zip(gd, gm)
        ]
        return loss, grads

    def residual_rms(self, s: Surrogate) -> float:
        return self.data.residual_rms(s)


def mse_loss(s: Surrogate, x, y):
    """MSE of ``s`` on ``(x, y)`` and its weight gradients."""
    return MSELoss(x, y).value_and_grad(s)


def mixed_loss(s: Surrogate, x, y, source: SeparableFunction, alpha_data: float, alpha_model: float):
    return MixedLoss(MSELoss(x, y), EnergyLoss(source), alpha_data, alpha_model).value_and_grad(s)


# ----------------------------------------------------------------------
# training loops


def _flatten(nested):
    return [a for row in nested for a in row]


def _optimize(s: Surrogate, cfg: TrainConfig, loss_fn, dirichlet: bool, frozen_modes: int = 0):
    """Run ``cfg.epochs`` Adam epochs on ``s`` in place; return per-epoch history."""
    if dirichlet:
        apply_dirichlet(s)
        free = dirichlet_free_params(s)
        params = _flatten(free)
    else:
        params = _flatten(s.weights)
    opt = Adam(params, cfg.betas, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    n = getattr(loss_fn, "size", None)
    minibatch = cfg.batch is not None and n is not None and cfg.batch < n

    def sync():
        if dirichlet:
            full = dirichlet_full_params(free)
            for l, row in enumerate(full):
                for p, w in enumerate(row):
                    s.weights[l][p][...] = w

    def grads_for(g):
        if dirichlet:
            g = dirichlet_reduce_grad(g)
        flat = _flatten(g)
        if frozen_modes:
            for a in flat:
                a[:frozen_modes] = 0.0
        return flat

    losses, lrs = [], []
    initial = None
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end)
        if minibatch:
            order = rng.permutation(n)
            epoch_fn = loss_fn.shuffled(s, order) if hasattr(loss_fn, "shuffled") else loss_fn
            total = 0.0
            for start in range(0, n, cfg.batch):
                if epoch_fn is loss_fn:
                    idx = order[start : start + cfg.batch]
                else:
                    idx = slice(start, min(start + cfg.batch, n))
                loss, g = epoch_fn.value_and_grad(s, idx)
                opt.step(params, grads_for(g), lr)
                sync()
                total += loss * (min(start + cfg.batch, n) - start)
            loss = total / n
        else:
            loss, g = loss_fn.value_and_grad(s)
            opt.step(params, grads_for(g), lr)
            sync()
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        if initial is None:
            initial = loss
        elif abs(loss) > DIVERGENCE_FACTOR * max(abs(initial), 1e-12):
            raise TrainingError(f"loss diverged at epoch {epoch}: {loss:.3e} (initial {initial:.3e})")
        losses.append(loss)
        lrs.append(lr)
    if not s.is_finite():
        raise TrainingError("non-finite weights after training")
    return losses, lrs


def train_cooperative(s: Surrogate, cfg: TrainConfig, loss_fn, dirichlet: bool = False) -> TrainReport:
    """Train all modes of ``s`` jointly, in place.

    The recorded loss of each epoch is the loss at the weights before that
    epoch's update; ``final_loss`` is evaluated after the last update.
    """
    t0 = time.perf_counter()
    losses, lrs = _optimize(s, cfg, loss_fn, dirichlet)
    final = float(loss_fn.value(s))
    report = TrainReport(
        loss_history=losses,
        lr_history=lrs,
        wall_time=time.perf_counter() - t0,
        final_loss=final,
        modes_used=s.modes,
        parameter_count=s.parameter_count(),
    )
    log.info("cooperative training: %d epochs, final loss %.3e", cfg.epochs, final)
    return report


def _append_mode(s: Surrogate, seed: int, scale: float) -> Surrogate:
    fresh = Surrogate(s.dims, 1, s.n_elements, layers=s.layers, seed=seed, init_output=scale)
    out = s.copy()
    out.modes += 1
    out.weights = [
        [np.vstack([a, b]) for a, b in zip(ra, rb)] for ra, rb in zip(s.weights, fresh.weights)
    ]
    return out


def train_sequential(
    template: Surrogate, cfg: TrainConfig, loss_fn, dirichlet: bool = False
) -> tuple[Surrogate, TrainReport]:
    """Greedy mode-by-mode training.

    Mode ``k`` is trained with modes ``1..k-1`` frozen, which for a data loss
    is fitting the residual ``u - sum_{i<k} M_i``. The residual norm is the
    root mean square over the training data. A mode that does not reduce the
    residual is discarded and training stops.
    """
    if not getattr(loss_fn, "has_data", False):
        raise ValueError("sequential learning needs a data term to measure the residual")
    t0 = time.perf_counter()
    s = Surrogate(
        template.dims,
        1,
        template.n_elements,
        layers=template.layers,
        seed=cfg.seed,
        init_output=template.init_output,
    )
    report = TrainReport(converged=False)
    prev = math.sqrt(float(np.mean(loss_fn.data.y**2 if isinstance(loss_fn, MixedLoss) else loss_fn.y**2)))
    for k in range(cfg.max_modes):
        # a new mode starts at the scale of the residual it has to fit
        cand = s if k == 0 else _append_mode(s, cfg.seed + k, max(prev, 1e-12))
        losses, lrs = _optimize(cand, cfg, loss_fn, dirichlet, frozen_modes=k)
        rms = loss_fn.residual_rms(cand)
        if k > 0 and rms > prev:
            log.info("mode %d did not reduce the residual (%.3e > %.3e); stopping", k + 1, rms, prev)
            break
        s, prev = cand, rms
        report.loss_history += losses
        report.lr_history += lrs
        report.residual_norms.append(rms)
        if rms < cfg.tol:
            report.converged = True
            break
    report.modes_used = s.modes
    report.parameter_count = s.parameter_count()
    report.final_loss = float(loss_fn.value(s))
    report.wall_time = time.perf_counter() - t0
    return s, report
