"""Command-line harness for the benchmarks.

Every run writes its tables (CSV), summaries (JSON) and a ``metadata.json``
into ``--out``. Each file carries the hash of the resolved configuration;
CSV files start with a ``# config_hash=...`` comment line.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .inversion import InversionJob, invert_batch, make_inversion_toy, toy_function
from .model import Surrogate
from .poisson import POISSON_COLUMNS, dof_to_elements, solve_poisson
from .regression import Dataset, _split, add_noise, lhs_sample, make_dataset, run_bench
from .training import TrainConfig

__all__ = ["RunConfig", "build_parser", "parse_args", "run", "main", "THREADS_ENV"]

COMMANDS = ("fit", "solve-poisson", "invert", "bench-borehole", "bench-sobolg")
# applied in the package __init__, before numpy loads its BLAS
THREADS_ENV = "KHRONOS_NUM_THREADS"

# per-command defaults; None means the flag does not apply
DEFAULTS = {
    "fit": dict(
        samples=10_000, modes=1, elements=8, epochs=500, batch=None, lr_start=0.05, lr_end=0.001, sigma=0.0
    ),
    "solve-poisson": dict(dof=[16, 32, 64, 128], modes=1, epochs=3000, lr_start=0.05, lr_end=1e-4),
    "invert": dict(
        batch=[500, 1000, 2000, 4000, 8000, 16000],
        iters=10,
        samples=8000,
        modes=2,
        elements=32,
        epochs=2000,
        lr_start=0.05,
        lr_end=0.001,
    ),
    "bench-borehole": dict(
        samples=100_000, modes=3, elements=2, epochs=100, batch=512, lr_start=0.05, lr_end=0.001
    ),
    "bench-sobolg": dict(
        samples=100_000, modes=1, elements=40, epochs=1000, batch=None, lr_start=0.15, lr_end=0.05, sigma=0.01
    ),
}


@dataclass
class RunConfig:
    command: str
    seed: int
    out: Path
    params: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        """Everything that determines the numbers, output directory excluded."""
        return {"command": self.command, "seed": self.seed, **self.params}

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (np.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (np.isfinite(v) and v >= 0):
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return v


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="khronos", description="Separable spline surrogate benchmarks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        p.add_argument("--out", type=Path, default=Path("results"), help="output directory")

    def training(p, cmd):
        d = DEFAULTS[cmd]
        p.add_argument("--modes", type=_positive_int, default=d["modes"])
        p.add_argument("--epochs", type=_positive_int, default=d["epochs"])
        p.add_argument("--lr-start", type=_positive_float, default=d["lr_start"])
        p.add_argument("--lr-end", type=_positive_float, default=d["lr_end"])

    p = sub.add_parser("fit", help="fit a surrogate to a CSV file or a built-in generator")
    common(p)
    training(p, "fit")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", type=Path, help="CSV with a header; last column is the target")
    src.add_argument("--generator", choices=["borehole", "sobol_g", "toy"])
    p.add_argument("--samples", type=_positive_int, default=DEFAULTS["fit"]["samples"])
    p.add_argument("--elements", type=_positive_int, default=DEFAULTS["fit"]["elements"])
    p.add_argument("--batch", type=_positive_int, default=None, help="mini-batch size (default full batch)")
    p.add_argument("--sigma", type=_nonneg_float, default=0.0)

    p = sub.add_parser("solve-poisson", help="energy-trained Poisson ladder over DoF")
    common(p)
    training(p, "solve-poisson")
    p.add_argument("--dof", type=_int_list, default=DEFAULTS["solve-poisson"]["dof"])

    p = sub.add_parser("invert", help="batched Gauss-Newton level-set recovery on the toy surrogate")
    common(p)
    training(p, "invert")
    d = DEFAULTS["invert"]
    p.add_argument("--batch", type=_int_list, default=d["batch"], help="comma-separated batch sizes")
    p.add_argument("--iters", type=_positive_int, default=d["iters"])
    p.add_argument("--samples", type=_positive_int, default=d["samples"], help="training samples")
    p.add_argument("--elements", type=_positive_int, default=d["elements"])

    for cmd, helptext in (
        ("bench-borehole", "8-dimensional borehole regression"),
        ("bench-sobolg", "20-dimensional noisy Sobol-G regression"),
    ):
        p = sub.add_parser(cmd, help=helptext)
        common(p)
        training(p, cmd)
        d = DEFAULTS[cmd]
        p.add_argument("--samples", type=_positive_int, default=d["samples"])
        p.add_argument("--elements", type=_positive_int, default=d["elements"])
        p.add_argument("--batch", type=_positive_int, default=d["batch"], help="mini-batch size")
        if cmd == "bench-sobolg":
            p.add_argument("--sigma", type=_nonneg_float, default=d["sigma"])
    return parser


def parse_args(argv=None) -> RunConfig:
    """Parse and validate; usage errors exit with status 2."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        parser.print_usage(sys.stderr)
        parser.exit(2, "khronos: error: a command is required\n")
    params = {k: v for k, v in vars(ns).items() if k not in ("command", "seed", "out")}
    if "data" in params:
        params["data"] = None if params["data"] is None else str(params["data"])
    if params["lr_start"] < params["lr_end"]:
        parser.error("--lr-start must be >= --lr-end")
    if ns.command == "solve-poisson":
        for dof in params["dof"]:
            try:
                dof_to_elements(dof, params["modes"])
            except ValueError as exc:
                parser.error(f"--dof: {exc}")
    if ns.command in ("fit", "bench-borehole", "bench-sobolg") and params["samples"] < 4:
        parser.error("--samples must be >= 4")
    return RunConfig(command=ns.command, seed=ns.seed, out=ns.out, params=params)


# ----------------------------------------------------------------------
# output helpers


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_csv(path: Path, columns, rows, config_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, Path):
        return str(v)
    return v


def _write_json(path: Path, payload: dict, config_hash: str) -> None:
    doc = {"config_hash": config_hash, **_jsonable(payload)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _save_model(path: Path, s: Surrogate, config_hash: str) -> None:
    path.write_text(json.dumps({**s.to_dict(), "config_hash": config_hash}))


def _history_rows(report):
    return [
        {"epoch": i, "lr": lr, "loss": loss}
        for i, (lr, loss) in enumerate(zip(report.lr_history, report.loss_history))
    ]


def _train_cfg(cfg: RunConfig, batch=None) -> TrainConfig:
    p = cfg.params
    return TrainConfig(
        epochs=p["epochs"],
        lr_start=p["lr_start"],
        lr_end=p["lr_end"],
        batch=batch,
        seed=cfg.seed,
        modes=p["modes"],
    )


# ----------------------------------------------------------------------
# commands


def _load_csv_dataset(path: Path, seed: int) -> Dataset:
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, comments="#")
    if table.shape[1] < 2 or table.shape[0] < 4:
        raise ValueError(f"{path}: need at least 4 rows and 2 columns")
    if not np.all(np.isfinite(table)):
        raise ValueError(f"{path}: non-finite values")
    raw_x, raw_y = table[:, :-1], table[:, -1]
    lo, hi = raw_x.min(axis=0), raw_x.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    train, test = _split(table.shape[0], 0.7, np.random.SeedSequence(seed))
    t_lo, t_hi = float(raw_y[train].min()), float(raw_y[train].max())
    if t_hi == t_lo:
        raise ValueError(f"{path}: constant target on the training split")
    ds = Dataset(
        # test inputs outside the training range are clipped onto the domain
        inputs=np.clip((raw_x - lo) / (hi - lo), 0.0, 1.0),
        targets=(raw_y - t_lo) / (t_hi - t_lo),
        input_lo=lo,
        input_hi=hi,
        target_lo=t_lo,
        target_hi=t_hi,
        train=train,
        test=test,
        meta={"generator": f"csv:{path.name}", "n": table.shape[0], "d": raw_x.shape[1], "seed": seed, "sigma": 0.0},
    )
    return ds


def _toy_dataset(n: int, seed: int, sigma: float) -> Dataset:
    ss = np.random.SeedSequence(seed)
    s_lhs, s_noise, s_split = ss.spawn(3)
    x = lhs_sample(n, 2, s_lhs)
    clean = toy_function(x[:, 0], x[:, 1])
    raw = add_noise(clean, sigma, s_noise)
    train, test = _split(n, 0.7, s_split)
    t_lo, t_hi = float(raw[train].min()), float(raw[train].max())
    ds = Dataset(
        inputs=x,
        targets=(raw - t_lo) / (t_hi - t_lo),
        input_lo=np.zeros(2),
        input_hi=np.ones(2),
        target_lo=t_lo,
        target_hi=t_hi,
        train=train,
        test=test,
        meta={"generator": "toy", "n": n, "d": 2, "seed": seed, "sigma": sigma},
    )
    ds.clean_targets = ds.normalize_targets(clean)
    return ds


def _cmd_fit(cfg: RunConfig, meta: dict) -> dict:
    p = cfg.params
    if p["data"] is not None:
        ds = _load_csv_dataset(Path(p["data"]), cfg.seed)
    elif p["generator"] == "toy":
        ds = _toy_dataset(p["samples"], cfg.seed, p["sigma"])
    else:
        ds = make_dataset(p["generator"], p["samples"], seed=cfg.seed, sigma=p["sigma"])
    s, out, report = run_bench(ds, p["elements"], _train_cfg(cfg, p["batch"]))
    h = cfg.config_hash
    out.update(target_lo=ds.target_lo, target_hi=ds.target_hi)
    _save_model(cfg.out / "model.json", s, h)
    _write_csv(cfg.out / "train_history.csv", ["epoch", "lr", "loss"], _history_rows(report), h)
    _write_json(cfg.out / "fit.json", out, h)
    meta["parameter_counts"] = {"total": s.parameter_count()}
    return out


def _cmd_solve_poisson(cfg: RunConfig, meta: dict) -> dict:
    p = cfg.params
    rows, counts = [], {}
    for dof in p["dof"]:
        s, m, _ = solve_poisson(dof, _train_cfg(cfg), modes=p["modes"])
        rows.append(m)
        counts[str(dof)] = {"total": m["params_total"], "free": m["params_free"]}
    h = cfg.config_hash
    _write_csv(cfg.out / "poisson.csv", POISSON_COLUMNS, rows, h)
    _write_json(cfg.out / "poisson.json", {"rows": rows}, h)
    meta["parameter_counts"] = counts
    return {"rows": rows}


INVERSION_COLUMNS = ["batch", "total_ms", "per_point_us", "failure_pct", "rmse", "rmse_converged"]


def _cmd_invert(cfg: RunConfig, meta: dict) -> dict:
    p = cfg.params
    _, s, info = make_inversion_toy(
        n_samples=p["samples"], n_elements=p["elements"], cfg=_train_cfg(cfg), seed=cfg.seed
    )
    h = cfg.config_hash
    rows = []
    for b in p["batch"]:
        # each batch gets its own reproducible LHS draw of initial points
        x0 = lhs_sample(b, 2, np.random.SeedSequence([cfg.seed, b]))
        res = invert_batch(s, InversionJob(0.0, x0, max_iters=p["iters"]))
        rows.append(res.summary())
        levelset = cfg.out / f"levelset_{b}.csv"
        _write_csv(
            levelset,
            ["x", "y", "residual", "converged"],
            [
                {"x": pt[0], "y": pt[1], "residual": r, "converged": int(c)}
                for pt, r, c in zip(res.final_points, res.residuals, res.converged)
            ],
            h,
        )
    _save_model(cfg.out / "model.json", s, h)
    _write_csv(cfg.out / "inversion.csv", INVERSION_COLUMNS, rows, h)
    summary = {
        "rows": rows,
        "surrogate": {k: v for k, v in info.items() if k != "report"},
        "failure_spread_pp": max(r["failure_pct"] for r in rows) - min(r["failure_pct"] for r in rows),
    }
    _write_json(cfg.out / "inversion.json", summary, h)
    meta["parameter_counts"] = {"total": info["parameter_count"]}
    return summary


def _cmd_bench(cfg: RunConfig, meta: dict, name: str) -> dict:
    p = cfg.params
    ds = make_dataset(name, p["samples"], seed=cfg.seed, sigma=p.get("sigma", 0.0))
    s, out, report = run_bench(ds, p["elements"], _train_cfg(cfg, p["batch"]))
    h = cfg.config_hash
    _save_model(cfg.out / "model.json", s, h)
    _write_csv(cfg.out / "train_history.csv", ["epoch", "lr", "loss"], _history_rows(report), h)
    _write_json(cfg.out / f"{name}.json", out, h)
    meta["parameter_counts"] = {"total": out["parameter_count"]}
    return out


def run(cfg: RunConfig) -> int:
    """Execute ``cfg``; returns the process exit code."""
    meta = {
        "command": cfg.command,
        "seed": cfg.seed,
        "config": cfg.resolved(),
        "config_hash": cfg.config_hash,
        "version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
        "threads": os.environ.get(THREADS_ENV),
    }
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
        if not os.access(cfg.out, os.W_OK):
            raise PermissionError(f"output directory {cfg.out} is not writable")
        if cfg.command == "fit":
            _cmd_fit(cfg, meta)
        elif cfg.command == "solve-poisson":
            _cmd_solve_poisson(cfg, meta)
        elif cfg.command == "invert":
            _cmd_invert(cfg, meta)
        elif cfg.command == "bench-borehole":
            _cmd_bench(cfg, meta, "borehole")
        else:
            _cmd_bench(cfg, meta, "sobol_g")
        _write_json(cfg.out / "metadata.json", meta, cfg.config_hash)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a structured report
        report = {
            "status": "error",
            "command": cfg.command,
            "error": type(exc).__name__,
            "message": str(exc),
            "config": cfg.resolved(),
            "config_hash": cfg.config_hash,
        }
        print(json.dumps(_jsonable(report)), file=sys.stderr)
        try:
            (cfg.out / "error.json").write_text(json.dumps(_jsonable(report), indent=2) + "\n")
        except OSError:
            pass
        if os.environ.get("KHRONOS_DEBUG"):
            traceback.print_exc()
        return 1
    return 0


def main(argv=None) -> int:
    return run(parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
