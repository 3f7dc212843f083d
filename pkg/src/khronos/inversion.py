"""Batched Gauss-Newton inversion of a trained surrogate.

Each point is driven towards ``u(x) = z`` with the update

    x <- clip(x - (u(x) - z) / max(|grad u|^2, floor) * grad u, 0, 1)

independently of every other point in the batch.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Surrogate
from .regression import lhs_sample, mse
from .training import MSELoss, TrainConfig, train_cooperative

__all__ = [
    "InversionJob",
    "InversionResult",
    "gauss_newton_step",
    "invert_batch",
    "toy_function",
    "make_inversion_toy",
]


@dataclass
class InversionJob:
    targets: np.ndarray | float
    init_points: np.ndarray
    max_iters: int = 10
    fail_threshold: float = 1e-3
    grad_floor: float = 1e-12

    def __post_init__(self):
        self.init_points = np.atleast_2d(np.asarray(self.init_points, dtype=np.float64))
        n = self.init_points.shape[0]
        z = np.asarray(self.targets, dtype=np.float64)
        if z.ndim == 0:
            z = np.full(n, float(z))
        if z.shape != (n,):
            raise ValueError(f"{z.size} targets for {n} initial points")
        self.targets = z
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class InversionResult:
    final_points: np.ndarray
    residuals: np.ndarray
    converged: np.ndarray
    rmse: float
    rmse_converged: float
    failure_rate: float
    wall_time: float
    median_history: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        n = self.residuals.size
        return {
            "batch": n,
            "total_ms": 1e3 * self.wall_time,
            "per_point_us": 1e6 * self.wall_time / n,
            "failure_pct": 100.0 * self.failure_rate,
            "rmse": self.rmse,
            "rmse_converged": self.rmse_converged,
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "residual", "converged"])
            for pt, r, c in zip(self.final_points, self.residuals, self.converged):
                w.writerow([repr(float(pt[0])), repr(float(pt[1])), repr(float(r)), int(c)])

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2))


def _value_and_grad(s: Surrogate, x: np.ndarray):
    res = s.evaluate(s.tables(x), need_deriv=True)
    grad = np.einsum("pmn,pmn->np", res["dF"], s._others(res["F"]))
    return res["u"], grad


def gauss_newton_step(s: Surrogate, x, z, grad_floor: float = 1e-12):
    """One clamped Gauss-Newton update for a point ``(dims,)`` or batch ``(n, dims)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    u, g = _value_and_grad(s, x)
    denom = np.maximum(np.sum(g * g, axis=1), grad_floor)
    step = ((u - z) / denom)[:, None] * g
    out = np.clip(x - step, 0.0, 1.0)
    return out[0] if single else out


def invert_batch(s: Surrogate, job: InversionJob) -> InversionResult:
    """Run ``job.max_iters`` Gauss-Newton steps on every initial point."""
    x = job.init_points.copy()
    z = job.targets
    history = []
    t0 = time.perf_counter()
    for _ in range(job.max_iters):
        x = gauss_newton_step(s, x, z, job.grad_floor)
        history.append(float(np.median(np.abs(s.forward(x) - z))))
    wall = time.perf_counter() - t0
    residuals = np.abs(s.forward(x) - z)
    converged = residuals <= job.fail_threshold
    ok = residuals[converged]
    return InversionResult(
        final_points=x,
        residuals=residuals,
        converged=converged,
        rmse=float(np.sqrt(np.mean(residuals**2))),
        rmse_converged=float(np.sqrt(np.mean(ok**2))) if ok.size else float("nan"),
        failure_rate=float(np.mean(~converged)),
        wall_time=wall,
        median_history=history,
    )


def toy_function(x, y):
    """Two-mode oscillatory test field on the unit square."""
    x, y = np.asarray(x), np.asarray(y)
    return np.sin(4 * np.pi * x) * np.sin(2 * np.pi * y) + 0.5 * np.sin(6 * np.pi * x) * np.sin(3 * np.pi * y)


def make_inversion_toy(
    n_samples: int = 8000,
    n_elements: int = 32,
    cfg: TrainConfig | None = None,
    n_test: int = 4000,
    seed: int = 0,
):
    """Fit a surrogate to LHS samples of :func:`toy_function`.

    Returns ``(toy_function, surrogate, info)`` where ``info`` holds the
    held-out MSE and the training report.
    """
    cfg = cfg or TrainConfig(epochs=2000, lr_start=0.05, lr_end=1e-3, modes=2, seed=seed)
    ss = np.random.SeedSequence(seed)
    s_train, s_test = ss.spawn(2)
    x = lhs_sample(n_samples, 2, s_train)
    xt = lhs_sample(n_test, 2, s_test)
    s = Surrogate(2, cfg.modes, n_elements, seed=cfg.seed)
    report = train_cooperative(s, cfg, MSELoss(x, toy_function(x[:, 0], x[:, 1])))
    test_mse = mse(s.forward(xt), toy_function(xt[:, 0], xt[:, 1]))
    info = {
        "n_samples": n_samples,
        "n_elements": n_elements,
        "modes": cfg.modes,
        "epochs": cfg.epochs,
        "seed": seed,
        "train_mse": report.final_loss,
        "test_mse": test_mse,
        "parameter_count": s.parameter_count(),
        "report": report,
    }
    return toy_function, s, info
