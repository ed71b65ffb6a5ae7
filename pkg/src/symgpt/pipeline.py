"""End-to-end inference: encode, sample a skeleton, fit constants, score."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .expr import Expr, evaluate_batch, max_variable, parse, skeleton_string, to_infix_string
from .fit import fit_constants, mse_n
from .gpt import SymbolicGPT
from .tnet import point_cloud

FAILURE = math.inf


@dataclass
class InferOptions:
    top_k: int = 40
    max_len: int = 200
    retries: int = 3
    restarts: int = 10
    max_iter: int = 100
    c_min: float = -2.1
    c_max: float = 2.1
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Prediction:
    sample: str
    skeleton: str | None
    expr: Expr | None
    mse_n: float
    attempts: int
    t_encode: float
    t_sample: float
    t_fit: float
    t_total: float

    @property
    def ok(self) -> bool:
        return self.expr is not None

    @property
    def equation(self) -> str:
        return to_infix_string(self.expr) if self.expr is not None else ""

    def to_dict(self) -> dict:
        return {
            "sample": self.sample,
            "skeleton": self.skeleton,
            "equation": self.equation,
            "mse_n": self.mse_n,
            "attempts": self.attempts,
            "t_encode": self.t_encode,
            "t_sample": self.t_sample,
            "t_fit": self.t_fit,
            "t_total": self.t_total,
        }


def predict(model: SymbolicGPT, X: np.ndarray, y: np.ndarray, opts: InferOptions | None = None,
            rng: np.random.Generator | None = None) -> Prediction:
    """Predict an equation for one dataset.

    A sample that does not parse, uses variables the data lacks, or cannot be
    fitted to finite values is redrawn up to ``opts.retries`` more times. If
    every attempt fails the prediction carries the ``inf`` failure score.
    """
    opts = opts or InferOptions()
    rng = np.random.default_rng(opts.seed) if rng is None else rng
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    t_start = time.perf_counter()
    w_D = model.embed(point_cloud(X, y, model.d_max))
    t_encode = time.perf_counter() - t_start
    t_sample = t_fit = 0.0
    sample = ""
    for attempt in range(1, opts.retries + 2):
        t0 = time.perf_counter()
        sample = model.sample(w_D, rng, top_k=opts.top_k, max_len=opts.max_len)
        try:
            skeleton = parse(sample)
        except ValueError:  # ParseError and malformed nodes such as x0
            skeleton = None
        t1 = time.perf_counter()
        t_sample += t1 - t0
        if skeleton is None or max_variable(skeleton) > X.shape[1]:
            continue
        res = fit_constants(skeleton, X, y, restarts=opts.restarts, max_iter=opts.max_iter,
                            c_min=opts.c_min, c_max=opts.c_max, seed=opts.seed + attempt)
        score = mse_n(y, evaluate_batch(res.expr, X)) if res.ok else FAILURE
        t_fit += time.perf_counter() - t1
        if np.isfinite(score):
            return Prediction(sample, skeleton_string(skeleton), res.expr, score, attempt,
                              t_encode, t_sample, t_fit, time.perf_counter() - t_start)
    return Prediction(sample, None, None, FAILURE, opts.retries + 1, t_encode, t_sample, t_fit,
                      time.perf_counter() - t_start)
