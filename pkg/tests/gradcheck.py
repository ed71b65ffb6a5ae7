"""Central finite-difference gradient checks shared by the test modules."""

import numpy as np

from symgpt import nn


def numeric_grad(f, arrays, i, h=1e-6):
    x = arrays[i]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8))


def check_op(op, *arrays, seed=0, wrt=None):
    """Max relative error between analytic and numeric gradients of ``sum(R * op(*inputs))``."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    wrt = range(len(arrays)) if wrt is None else wrt
    out = op(*[nn.Tensor(a) for a in arrays])
    R = np.random.default_rng(seed).normal(size=out.shape)

    def f():
        with nn.no_grad():
            return float((op(*[nn.Tensor(a) for a in arrays]).data * R).sum())

    ts = [nn.Tensor(a, requires_grad=True) for a in arrays]
    loss = nn.sum_(nn.mul(op(*ts), R))
    nn.backward(loss)
    return max(rel_error(ts[i].grad, numeric_grad(f, arrays, i)) for i in wrt)
