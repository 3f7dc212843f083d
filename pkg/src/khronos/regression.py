"""Model-free regression benchmarks: borehole and noisy Sobol-G."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .model import Surrogate
from .training import MSELoss, TrainConfig, train_cooperative, train_sequential

__all__ = [
    "BOREHOLE_RANGES",
    "SOBOL_G_A",
    "lhs_sample",
    "borehole",
    "sobol_g",
    "add_noise",
    "mse",
    "r2_score",
    "Dataset",
    "make_dataset",
    "save_dataset",
    "load_dataset",
    "run_borehole_bench",
    "run_sobolg_bench",
]

BOREHOLE_RANGES = np.array(
    [
        [0.05, 0.15],  # borehole radius (m)
        [100.0, 50000.0],  # radius of influence (m)
        [63700.0, 115600.0],  # upper aquifer transmissivity (m^2/yr)
        [990.0, 1110.0],  # upper aquifer head (m)
        [63.1, 116.0],  # lower aquifer transmissivity (m^2/yr)
        [700.0, 820.0],  # lower aquifer head (m)
        [1120.0, 1680.0],  # borehole length (m)
        [9855.0, 12045.0],  # hydraulic conductivity (m/yr)
    ]
)

SOBOL_G_A = np.array([0.0] * 5 + [1.5] * 5 + [4.0] * 10)


def lhs_sample(n: int, d: int, seed=None) -> np.ndarray:
    """Latin hypercube sample of ``n`` points in ``[0, 1]^d``.

    Every dimension has exactly one point in each stratum ``[k/n, (k+1)/n)``,
    placed uniformly at random inside it.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    return qmc.LatinHypercube(d=d, scramble=True, seed=np.random.default_rng(seed)).random(n)


def borehole(p, check: bool = True):
    """Water flow through a borehole; ``p`` has shape ``(8,)`` or ``(n, 8)``."""
    p = np.asarray(p, dtype=np.float64)
    if check:
        lo, hi = BOREHOLE_RANGES[:, 0], BOREHOLE_RANGES[:, 1]
        if np.any(p < lo) or np.any(p > hi):
            raise ValueError("borehole input outside the physical ranges")
    p1, p2, p3, p4, p5, p6, p7, p8 = np.moveaxis(p, -1, 0)
    logr = np.log(p2 / p1)
    return 2.0 * np.pi * p3 * (p4 - p6) / (logr * (1.0 + 2.0 * p7 * p3 / (logr * p1**2 * p8) + p3 / p5))


def sobol_g(p, a=SOBOL_G_A):
    """Sobol-G function ``prod_i (|4 p_i - 2| + a_i) / (1 + a_i)``."""
    p = np.asarray(p, dtype=np.float64)
    return np.prod((np.abs(4.0 * p - 2.0) + a) / (1.0 + a), axis=-1)


def add_noise(targets, sigma: float, seed=None) -> np.ndarray:
    """Add i.i.d. ``N(0, sigma^2)`` noise."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    targets = np.asarray(targets, dtype=np.float64)
    if sigma == 0:
        return targets.copy()
    return targets + np.random.default_rng(seed).normal(0.0, sigma, size=targets.shape)


def mse(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape or pred.size < 2:
        raise ValueError("need two equal-length arrays of at least 2 values")
    return float(np.mean((pred - truth) ** 2))


def r2_score(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape or pred.size < 2:
        raise ValueError("need two equal-length arrays of at least 2 values")
    ss_tot = np.sum((truth - truth.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("R^2 undefined for constant truth")
    return float(1.0 - np.sum((pred - truth) ** 2) / ss_tot)


@dataclass
class Dataset:
    """Normalized inputs and targets with a train/test split.

    ``inputs`` lie in the unit cube; ``input_lo``/``input_hi`` map them back
    to physical units. Targets are min-max scaled with the training split's
    range, so test targets may fall slightly outside [0, 1].
    """

    inputs: np.ndarray
    targets: np.ndarray
    input_lo: np.ndarray
    input_hi: np.ndarray
    target_lo: float
    target_hi: float
    train: np.ndarray
    test: np.ndarray
    clean_targets: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def normalize_inputs(self, raw):
        return (np.asarray(raw) - self.input_lo) / (self.input_hi - self.input_lo)

    def denormalize_inputs(self, x):
        return self.input_lo + np.asarray(x) * (self.input_hi - self.input_lo)

    def normalize_targets(self, raw):
        return (np.asarray(raw) - self.target_lo) / (self.target_hi - self.target_lo)

    def denormalize_targets(self, y):
        return self.target_lo + np.asarray(y) * (self.target_hi - self.target_lo)


def _split(n: int, train_frac: float, seed) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_frac * n))
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def _generator(name: str):
    if name == "borehole":
        return BOREHOLE_RANGES[:, 0].copy(), BOREHOLE_RANGES[:, 1].copy(), borehole
    if name == "sobol_g":
        return np.zeros(SOBOL_G_A.size), np.ones(SOBOL_G_A.size), sobol_g
    raise ValueError(f"unknown generator {name!r}")


def make_dataset(
    name: str,
    n: int,
    seed: int = 0,
    sigma: float = 0.0,
    train_frac: float = 0.7,
) -> Dataset:
    """Sample ``borehole`` or ``sobol_g`` by LHS, add noise, normalize and split."""
    lo, hi, fn = _generator(name)
    ss = np.random.SeedSequence(seed)
    s_lhs, s_noise, s_split = ss.spawn(3)
    unit = lhs_sample(n, lo.size, s_lhs)
    clean = fn(lo + unit * (hi - lo))
    raw = add_noise(clean, sigma, s_noise)
    train, test = _split(n, train_frac, s_split)
    t_lo, t_hi = float(raw[train].min()), float(raw[train].max())
    ds = Dataset(
        inputs=unit,
        targets=(raw - t_lo) / (t_hi - t_lo),
        input_lo=lo,
        input_hi=hi,
        target_lo=t_lo,
        target_hi=t_hi,
        train=train,
        test=test,
        meta={"generator": name, "n": n, "d": lo.size, "seed": seed, "sigma": sigma},
    )
    ds.clean_targets = ds.normalize_targets(clean)
    return ds


def save_dataset(ds: Dataset, path) -> None:
    """Write a JSON header line followed by row-major little-endian doubles.

    Each row holds the unit-cube inputs, the raw target and the raw clean
    target. The split is rebuilt from the seed on load.
    """
    raw = ds.denormalize_targets(ds.targets)
    clean = ds.denormalize_targets(ds.clean_targets)
    rows = np.column_stack([ds.inputs, raw, clean]).astype("<f8")
    header = dict(ds.meta, train_frac=ds.train.size / ds.inputs.shape[0])
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(rows.tobytes(order="C"))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        body = np.frombuffer(fh.read(), dtype="<f8")
    n, d = header["n"], header["d"]
    rows = body.reshape(n, d + 2)
    lo, hi, _ = _generator(header["generator"])
    ss = np.random.SeedSequence(header["seed"])
    _, _, s_split = ss.spawn(3)
    train, test = _split(n, header["train_frac"], s_split)
    raw, clean = rows[:, d], rows[:, d + 1]
    t_lo, t_hi = float(raw[train].min()), float(raw[train].max())
    ds = Dataset(
        inputs=rows[:, :d].copy(),
        targets=(raw - t_lo) / (t_hi - t_lo),
        input_lo=lo,
        input_hi=hi,
        target_lo=t_lo,
        target_hi=t_hi,
        train=train,
        test=test,
        meta={k: header[k] for k in ("generator", "n", "d", "seed", "sigma")},
    )
    ds.clean_targets = ds.normalize_targets(clean)
    return ds


def _evaluate(s: Surrogate, ds: Dataset) -> dict:
    x_test, y_test = ds.inputs[ds.test], ds.targets[ds.test]
    t0 = time.perf_counter()
    pred = s.forward(x_test)
    infer = time.perf_counter() - t0
    scale = ds.target_hi - ds.target_lo
    out = {
        "test_mse": mse(pred, y_test),
        "test_r2": r2_score(pred, y_test),
        "test_mse_raw": mse(pred * scale, y_test * scale),
        "inference_time_s": infer,
    }
    if ds.meta.get("sigma", 0.0) > 0 and ds.clean_targets is not None:
        clean = ds.clean_targets[ds.test]
        out["test_mse_clean"] = mse(pred, clean)
        out["test_r2_clean"] = r2_score(pred, clean)
    return out


def run_bench(ds: Dataset, n_elements: int, cfg: TrainConfig):
    """Train on the training split and score on the test split.

    Returns ``(surrogate, metrics, report)``.
    """
    loss = MSELoss(ds.inputs[ds.train], ds.targets[ds.train])
    y_bar = float(np.mean(loss.y))
    # start near the mean target; min-max targets are nonnegative on the training split
    template = Surrogate(
        ds.inputs.shape[1], cfg.modes, n_elements, seed=cfg.seed, init_output=max(y_bar, 1e-3)
    )
    if cfg.strategy == "sequential":
        s, report = train_sequential(template, cfg, loss)
    else:
        s = template
        report = train_cooperative(s, cfg, loss)
    out = {
        "generator": ds.meta["generator"],
        "n_samples": ds.inputs.shape[0],
        "seed": cfg.seed,
        "sigma": ds.meta.get("sigma", 0.0),
        "modes": s.modes,
        "n_elements": n_elements,
        "epochs": cfg.epochs,
        "lr_start": cfg.lr_start,
        "lr_end": cfg.lr_end,
        "parameter_count": s.parameter_count(),
        "train_mse": report.final_loss,
        "train_time_s": report.wall_time,
        "loss_first": report.loss_history[0],
        "loss_last": report.loss_history[-1],
    }
    out.update(_evaluate(s, ds))
    return s, out, report


def run_borehole_bench(
    n_samples: int = 100_000,
    n_elements: int = 2,
    cfg: TrainConfig | None = None,
    data_seed: int = 0,
):
    cfg = cfg or TrainConfig(epochs=100, lr_start=0.05, lr_end=0.001, batch=512, modes=3)
    ds = make_dataset("borehole", n_samples, seed=data_seed)
    return run_bench(ds, n_elements, cfg)


def run_sobolg_bench(
    n_samples: int = 100_000,
    n_elements: int = 40,
    sigma: float = 0.01,
    cfg: TrainConfig | None = None,
    data_seed: int = 0,
):
    cfg = cfg or TrainConfig(epochs=1000, lr_start=0.15, lr_end=0.05, modes=1)
    ds = make_dataset("sobol_g", n_samples, seed=data_seed, sigma=sigma)
    return run_bench(ds, n_elements, cfg)
