"""Benchmark harness: per-instance result rows, cumulative error curves,
timing tables, the point-count sweep, and SVG plots."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .eqgen import GenConfig, GenerationRejected, Instance, instance_rng, sample_dataset
from .expr import Const, Expr, evaluate_batch, parse, to_infix_string
from .fit import mse_n
from .gp import GPConfig, gp_regress
from .pipeline import InferOptions, predict

log = logging.getLogger(__name__)

CSV_FIELDS = ("method", "instance_id", "d", "n", "mse_n", "seconds", "equation")
SWEEP_NS = (25, 50, 100, 250, 500)

# A method is a picklable callable mapping (X, y, seed) to (predicted expression or None, seconds).
Method = Callable[[np.ndarray, np.ndarray, int], tuple[Expr | None, float]]


@dataclass
class Row:
    method: str
    instance_id: int
    d: int
    n: int
    mse_n: float
    seconds: float
    equation: str

    def as_csv(self, deterministic: bool = False) -> dict:
        return {
            "method": self.method,
            "instance_id": self.instance_id,
            "d": self.d,
            "n": self.n,
            "mse_n": repr(float(self.mse_n)),
            "seconds": "nan" if deterministic else f"{self.seconds:.6f}",
            "equation": self.equation,
        }


# ---------------------------------------------------------------------------
# Methods
# ---------------------------------------------------------------------------

def mean_method(X, y, seed=0):
    t0 = time.perf_counter()
    return Const(float(np.mean(y))), time.perf_counter() - t0


@dataclass
class GPMethod:
    cfg: GPConfig

    def __call__(self, X, y, seed=0):
        t0 = time.perf_counter()
        res = gp_regress(X, y, replace(self.cfg, seed=self.cfg.seed + seed))
        return res.expr, time.perf_counter() - t0


@dataclass
class SymbolicGPTMethod:
    model: object
    opts: InferOptions

    def __call__(self, X, y, seed=0):
        p = predict(self.model, X, y, replace(self.opts, seed=self.opts.seed + seed))
        return p.expr, p.t_total


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

def score_equation(equation: str, X: np.ndarray, y: np.ndarray) -> float:
    """MSE_N recomputed from a stored equation string (``inf`` for failures)."""
    if not equation:
        return math.inf
    return mse_n(y, evaluate_batch(parse(equation), X))


def _run_one(args) -> Row:
    name, method, idx, inst = args
    try:
        expr, seconds = method(inst.X, inst.y, idx)
    except Exception as exc:  # a crashing method is a failed instance, not a failed benchmark
        log.warning("%s failed on instance %d: %s", name, idx, exc)
        expr, seconds = None, math.nan
    equation = to_infix_string(expr) if expr is not None else ""
    score = score_equation(equation, inst.X, inst.y)
    return Row(name, idx, inst.d, inst.n, score, seconds, equation)


def run_benchmark(instances: Sequence[Instance], methods: dict[str, Method], workers: int = 1,
                  ids: Sequence[int] | None = None) -> list[Row]:
    """One row per (method, instance), ordered by method then instance id."""
    ids = list(range(len(instances))) if ids is None else list(ids)
    jobs = [(name, m, i, inst) for name, m in methods.items() for i, inst in zip(ids, instances)]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(_run_one, jobs))


def write_csv(rows: Sequence[Row], path: Path, deterministic: bool = False):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r.as_csv(deterministic))


def read_csv(path: Path) -> list[Row]:
    with Path(path).open(newline="") as f:
        return [Row(r["method"], int(r["instance_id"]), int(r["d"]), int(r["n"]), float(r["mse_n"]),
                    float(r["seconds"]), r["equation"]) for r in csv.DictReader(f)]


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

def _log10(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.log10(s)


def cdf_curve(scores: Sequence[float], thresholds: Sequence[float] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Fraction of scores with ``log10(score) <= t`` for each threshold ``t``.

    Failures (``inf``) count in the denominator and only pass the final
    ``+inf`` threshold, so the curve always ends at 1.0.
    """
    logs = _log10(scores)
    if thresholds is None:
        finite = logs[np.isfinite(logs)]
        lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 0.0)
        thresholds = np.linspace(math.floor(lo), math.ceil(hi), 101)
    t = np.append(np.asarray(thresholds, dtype=np.float64), math.inf)
    if logs.size == 0:
        return t, np.zeros_like(t)
    frac = (logs[None, :] <= t[:, None]).mean(axis=1)
    return t, frac


def by_method(rows: Sequence[Row]) -> dict[str, list[Row]]:
    out: dict[str, list[Row]] = {}
    for r in rows:
        out.setdefault(r.method, []).append(r)
    return out


def write_cdf(rows: Sequence[Row], path: Path):
    groups = by_method(rows)
    logs = _log10([r.mse_n for r in rows])
    finite = logs[np.isfinite(logs)]
    lo, hi = (math.floor(finite.min()), math.ceil(finite.max())) if finite.size else (0, 0)
    grid = np.linspace(lo, hi, 101)
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["log10_mse_n"] + list(groups))
        curves = [cdf_curve([r.mse_n for r in g], grid)[1] for g in groups.values()]
        t = np.append(grid, math.inf)
        for i, ti in enumerate(t):
            w.writerow([repr(float(ti))] + [repr(float(c[i])) for c in curves])


def timing_table(results: dict[str, Sequence[Row]]) -> str:
    """Markdown table: one row per method, one column per experiment, ``mean ± std`` seconds."""
    experiments = list(results)
    methods: list[str] = []
    for rows in results.values():
        for m in by_method(rows):
            if m not in methods:
                methods.append(m)
    lines = ["| Method | " + " | ".join(experiments) + " |",
             "|---|" + "---|" * len(experiments)]
    for m in methods:
        cells = []
        for e in experiments:
            secs = np.array([r.seconds for r in results[e] if r.method == m], dtype=np.float64)
            secs = secs[np.isfinite(secs)]
            cells.append(f"{secs.mean():.2f} ± {secs.std():.2f}" if secs.size else "n/a")
        lines.append(f"| {m} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def resample(instances: Sequence[Instance], n: int, cfg: GenConfig, seed: int) -> tuple[list[Instance], list[int]]:
    """The same equations on ``n`` freshly drawn points (skipping any that cannot be resampled)."""
    out, ids = [], []
    for i, inst in enumerate(instances):
        try:
            out.append(sample_dataset(inst.expr, cfg, instance_rng(seed, i, 100 + n), n=n, d=inst.d))
            ids.append(i)
        except GenerationRejected:
            continue
    return out, ids


def point_sweep(instances: Sequence[Instance], methods: dict[str, Method], cfg: GenConfig,
                ns: Sequence[int] = SWEEP_NS, seed: int = 0, workers: int = 1) -> list[dict]:
    """Median and mean-log MSE_N per method as the number of points varies."""
    out = []
    for n in ns:
        data, ids = resample(instances, n, cfg, seed)
        rows = run_benchmark(data, methods, workers, ids)
        for m, g in by_method(rows).items():
            scores = np.array([r.mse_n for r in g])
            out.append({"n": n, "method": m, "count": len(g), "median_mse_n": float(np.median(scores)),
                        "solved_1e-3": float(np.mean(scores <= 1e-3))})
    return out


def write_sweep(sweep: Sequence[dict], path: Path):
    with Path(path).open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["n", "method", "count", "median_mse_n", "solved_1e-3"],
                           lineterminator="\n")
        w.writeheader()
        for rec in sweep:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in rec.items()})


def read_sweep(path: Path) -> list[dict]:
    with Path(path).open(newline="") as f:
        return [{"n": int(r["n"]), "method": r["method"], "count": int(r["count"]),
                 "median_mse_n": float(r["median_mse_n"]), "solved_1e-3": float(r["solved_1e-3"])}
                for r in csv.DictReader(f)]


# ---------------------------------------------------------------------------
# Plots
# ---------------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "symgpt"
    return plt


def plot_cdf(rows: Sequence[Row], path: Path, title: str = ""):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for m, g in by_method(rows).items():
        t, frac = cdf_curve([r.mse_n for r in g])
        ax.step(t[:-1], frac[:-1], where="post", label=m)
    ax.set_xlabel("log10 MSE_N threshold")
    ax.set_ylabel("fraction of instances at or below")
    ax.set_ylim(0, 1)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_sweep(sweep: Sequence[dict], path: Path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for m in dict.fromkeys(rec["method"] for rec in sweep):
        recs = [r for r in sweep if r["method"] == m]
        ax.plot([r["n"] for r in recs], [r["median_mse_n"] for r in recs], marker="o", label=m)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("number of points")
    ax.set_ylabel("median MSE_N")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
