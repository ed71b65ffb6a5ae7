"""Constant fitting for skeletons and the normalized MSE score."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .expr import Expr, compile_expr, count_placeholders, substitute

EPS = 1e-8

CONVERGED = "converged"
MAX_ITER = "max-iter"
FAILED = "failed"


def mse_n(y, y_hat, eps: float = EPS) -> float:
    """Mean squared error divided by ``||y + eps||_2``.

    Returns ``inf`` when ``y_hat`` has a non-finite entry.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.shape[0]} targets vs {y_hat.shape[0]} predictions")
    if y.size == 0:
        raise ValueError("empty input")
    if not np.isfinite(y_hat).all():
        return math.inf
    r = y - y_hat
    scale = float(np.max(np.abs(r)))
    if scale == 0.0:
        return 0.0
    norm = math.hypot(*(y + eps))  # scaled internally, so no overflow
    if norm == 0.0:
        return math.inf
    # factor out the residual scale so r**2 cannot overflow
    return scale * (float(np.mean((r / scale) ** 2)) * (scale / norm))


# ---------------------------------------------------------------------------
# BFGS
# ---------------------------------------------------------------------------

def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, fx: float | None = None,
                       rel_step: float = 1e-6) -> np.ndarray:
    """Central differences with step ``rel_step * (1 + |x_i|)``; one-sided near a domain edge."""
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        fp, fm = f(xp), f(xm)
        if np.isfinite(fp) and np.isfinite(fm):
            g[i] = (fp - fm) / (2 * h)
        else:
            if fx is None:
                fx = f(x)
            if np.isfinite(fp):
                g[i] = (fp - fx) / h
            elif np.isfinite(fm):
                g[i] = (fx - fm) / h
            else:
                g[i] = np.nan
    return g


def _zoom(phi, dphi, lo, hi, f_lo, f0, g0, c1, c2, max_iter=30):
    f_hi = phi(hi)
    for _ in range(max_iter):
        a = 0.5 * (lo + hi)
        fa = phi(a)
        if not np.isfinite(fa) or fa > f0 + c1 * a * g0 or fa >= f_lo:
            hi, f_hi = a, fa
        else:
            ga = dphi(a)
            if abs(ga) <= -c2 * g0:
                return a, fa
            if ga * (hi - lo) >= 0:
                hi, f_hi = lo, f_lo
            lo, f_lo = a, fa
        if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
            break
    return (lo, f_lo) if lo > 0 else (None, None)


def wolfe_line_search(phi, dphi, f0: float, g0: float, a1: float = 1.0, c1: float = 1e-4, c2: float = 0.9,
                      a_max: float = 1e6, max_iter: int = 30):
    """Strong-Wolfe step length along a descent direction (``g0 < 0``).

    Returns ``(alpha, phi(alpha))`` or ``(None, None)`` if no acceptable step exists.
    """
    a_prev, f_prev = 0.0, f0
    a = a1
    for i in range(max_iter):
        fa = phi(a)
        if not np.isfinite(fa) or fa > f0 + c1 * a * g0 or (i > 0 and fa >= f_prev):
            return _zoom(phi, dphi, a_prev, a, f_prev, f0, g0, c1, c2)
        ga = dphi(a)
        if not np.isfinite(ga):
            return _zoom(phi, dphi, a_prev, a, f_prev, f0, g0, c1, c2)
        if abs(ga) <= -c2 * g0:
            return a, fa
        if ga >= 0:
            return _zoom(phi, dphi, a, a_prev, fa, f0, g0, c1, c2)
        a_prev, f_prev = a, fa
        a = min(2.0 * a, a_max)
    return a_prev, f_prev


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    status: str
    iterations: int


def bfgs(f: Callable[[np.ndarray], float], x0: np.ndarray, max_iter: int = 100, gtol: float = 1e-10,
         ftol: float = 1e-15, grad: Callable | None = None) -> MinimizeResult:
    """Minimize ``f`` by BFGS with a strong-Wolfe line search.

    Gradients default to central finite differences.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    n = x.size
    fx = f(x)
    if not np.isfinite(fx):
        return MinimizeResult(x, math.inf, FAILED, 0)
    gradient = grad or (lambda z, fz=None: numerical_gradient(f, z, fz))
    g = gradient(x, fx)
    if not np.isfinite(g).all():
        return MinimizeResult(x, fx, FAILED, 0)
    H = np.eye(n)
    first = True
    for it in range(max_iter):
        if np.max(np.abs(g)) <= gtol * max(1.0, abs(fx)):
            return MinimizeResult(x, fx, CONVERGED, it)
        p = -H @ g
        slope = float(g @ p)
        if slope >= 0:
            H = np.eye(n)
            p = -g
            slope = float(g @ p)

        def phi(a):
            return f(x + a * p)

        def dphi(a):
            z = x + a * p
            return float(gradient(z) @ p)

        a1 = 1.0 if not first else min(1.0, 1.0 / max(1e-12, float(np.max(np.abs(g)))))
        alpha, f_new = wolfe_line_search(phi, dphi, fx, slope, a1=a1)
        if alpha is None:
            if np.allclose(H, np.eye(n)):
                return MinimizeResult(x, fx, CONVERGED, it)
            H = np.eye(n)
            continue
        s = alpha * p
        x_new = x + s
        g_new = gradient(x_new, f_new)
        if not np.isfinite(g_new).all():
            return MinimizeResult(x_new, f_new, CONVERGED if np.isfinite(f_new) else FAILED, it + 1)
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-16 * float(np.linalg.norm(s) * np.linalg.norm(yv)):
            if first:
                H = np.eye(n) * (sy / float(yv @ yv))
            rho = 1.0 / sy
            Hy = H @ yv
            H = H + ((sy + yv @ Hy) * rho ** 2) * np.outer(s, s) - rho * (np.outer(Hy, s) + np.outer(s, Hy))
            first = False
        converged = abs(fx - f_new) <= ftol * max(1.0, abs(fx))
        x, fx, g = x_new, f_new, g_new
        if converged:
            return MinimizeResult(x, fx, CONVERGED, it + 1)
    return MinimizeResult(x, fx, MAX_ITER, max_iter)


# ---------------------------------------------------------------------------
# Constant fitting
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    expr: Expr | None
    constants: np.ndarray
    objective: float
    status: str
    restarts: int
    iterations: int = 0
    history: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.status != FAILED


def fit_constants(skeleton: Expr, X: np.ndarray, y: np.ndarray, restarts: int = 10, max_iter: int = 100,
                  c_min: float = -2.1, c_max: float = 2.1, seed: int = 0,
                  target_mse_n: float | None = 1e-14, screen: int = 50,
                  polish: bool = True) -> FitResult:
    """Fit the placeholder values of ``skeleton`` to ``(X, y)`` by MSE.

    Starting points are uniform draws from ``[c_min, c_max]``: a pool of
    ``screen * restarts`` draws is scored once and BFGS runs from the
    ``restarts`` lowest-objective ones. The best finite result wins (ties:
    fewer iterations). Restarts stop early once the fit reaches
    ``target_mse_n``. Numeric trouble yields a ``failed`` status, never an
    exception.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    m = count_placeholders(skeleton)
    f_expr = compile_expr(skeleton)
    if m == 0:
        try:
            pred = f_expr(X)
        except (IndexError, ValueError):
            return FitResult(None, np.zeros(0), math.inf, FAILED, 0)
        obj = float(np.mean((pred - y) ** 2)) if np.isfinite(pred).all() else math.inf
        return FitResult(skeleton, np.zeros(0), obj, CONVERGED if np.isfinite(obj) else FAILED, 0)

    # MSE divided by a constant (the MSE_N denominator) so tolerances match the score
    scale = max(math.hypot(*(y + EPS)), 1e-300)

    def objective(c):
        pred = f_expr(X, c)
        if not np.isfinite(pred).all():
            return math.inf
        with np.errstate(over="ignore"):
            val = float(np.mean((pred - y) ** 2)) / scale
        return val if np.isfinite(val) else math.inf

    try:
        f_expr(X, np.zeros(m))
    except IndexError:
        return FitResult(None, np.zeros(m), math.inf, FAILED, 0)

    rng = np.random.default_rng(seed)
    n_restarts = max(1, restarts)
    # screen a pool of uniform draws and start BFGS from the most promising ones
    pool = rng.uniform(c_min, c_max, (n_restarts * screen, m))
    scores = np.array([objective(c) for c in pool])
    order = np.argsort(scores, kind="stable")
    best: MinimizeResult | None = None
    used = 0
    history = []
    for c0 in pool[order[:n_restarts]]:
        used += 1
        res = bfgs(objective, c0, max_iter=max_iter)
        history.append((res.fun, res.status, res.iterations))
        if res.status != FAILED and np.isfinite(res.fun) and np.isfinite(res.x).all():
            if best is None or (res.fun, res.iterations) < (best.fun, best.iterations):
                best = res
            if target_mse_n is not None:
                if mse_n(y, f_expr(X, best.x)) <= target_mse_n:
                    break
    if best is not None and polish and (
            best.status != CONVERGED
            or (target_mse_n is not None and mse_n(y, f_expr(X, best.x)) > target_mse_n)):
        # a fresh inverse-Hessian often gets past a stalled line search
        res = bfgs(objective, best.x, max_iter=max_iter)
        if res.status != FAILED and np.isfinite(res.fun) and res.fun <= best.fun and np.isfinite(res.x).all():
            best = MinimizeResult(res.x, res.fun, res.status, best.iterations + res.iterations)
    if best is None:
        return FitResult(None, np.full(m, np.nan), math.inf, FAILED, used, history=history)
    return FitResult(substitute(skeleton, best.x), best.x, best.fun * scale, best.status, used,
                     best.iterations, history)
