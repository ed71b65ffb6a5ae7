"""Order-invariant point-cloud encoder.

Each point ``(x_1..x_dmax, y)`` goes through three shared per-point layers
(widths e, 2e, 4e), a global max over points, a layer norm of the pooled
vector, and two fully connected layers down to an ``e``-dimensional dataset
embedding.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import nn
from .nn import LayerNorm, Linear, Module, Tensor


@dataclass
class TNetConfig:
    d_max: int = 5
    e: int = 64
    fc_hidden: int | None = None

    def __post_init__(self):
        if self.e < 1 or self.d_max < 1:
            raise ValueError("e and d_max must be >= 1")

    @property
    def hidden(self) -> int:
        """Width of the first fully connected layer (default ``2e``)."""
        return self.fc_hidden if self.fc_hidden is not None else 2 * self.e

    def to_dict(self) -> dict:
        return asdict(self)


def squash(v: np.ndarray) -> np.ndarray:
    """sign(v) * log(1 + |v|): monotone, odd, and tames large magnitudes."""
    return np.sign(v) * np.log1p(np.abs(v))


def point_cloud(X: np.ndarray, y: np.ndarray, d_max: int) -> np.ndarray:
    """Stack inputs and outputs into an ``n x (d_max + 1)`` matrix, zero-padding unused variables."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if d > d_max:
        raise ValueError(f"instance has {d} variables, encoder supports at most {d_max}")
    out = np.zeros((n, d_max + 1))
    out[:, :d] = X
    out[:, -1] = np.asarray(y, dtype=np.float64).reshape(-1)
    return out


def batch_point_clouds(clouds: Sequence[np.ndarray]) -> np.ndarray:
    """Stack clouds of different sizes into ``(B, n_max, d_max + 1)``.

    Short clouds are padded by repeating their own first point; a repeated
    point cannot change a max, so padding does not alter the embedding.
    """
    if not clouds:
        raise ValueError("empty batch")
    n_max = max(c.shape[0] for c in clouds)
    width = clouds[0].shape[1]
    out = np.empty((len(clouds), n_max, width))
    for i, c in enumerate(clouds):
        if c.shape[0] == 0:
            raise ValueError(f"point cloud {i} has no points")
        if c.shape[1] != width:
            raise ValueError(f"point cloud {i} has width {c.shape[1]}, expected {width}")
        out[i, : c.shape[0]] = c
        out[i, c.shape[0]:] = c[0]
    return out


class TNet(Module):
    def __init__(self, cfg: TNetConfig, rng: np.random.Generator):
        self.cfg = cfg
        width = cfg.d_max + 1
        e = cfg.e
        self.norm_scale = nn.parameter(np.ones(width))
        self.norm_shift = nn.parameter(np.zeros(width))
        self.stage1 = Linear(width, e, rng, std=np.sqrt(2.0 / width))
        self.stage2 = Linear(e, 2 * e, rng, std=np.sqrt(2.0 / e))
        self.stage3 = Linear(2 * e, 4 * e, rng, std=np.sqrt(2.0 / (2 * e)))
        # pooled maxima grow with n and with input range; normalizing them keeps
        # fc1 units from being pushed permanently below zero early in training
        self.pool_norm = LayerNorm(4 * e)
        self.fc1 = Linear(4 * e, cfg.hidden, rng, std=np.sqrt(2.0 / (4 * e)))
        self.fc2 = Linear(cfg.hidden, e, rng, std=np.sqrt(1.0 / cfg.hidden))

    def normalize(self, points: np.ndarray) -> Tensor:
        points = np.asarray(points, dtype=np.float64)
        if not np.isfinite(points).all():
            raise ValueError("point cloud contains non-finite values")
        return Tensor(squash(points)) * self.norm_scale + self.norm_shift

    def __call__(self, points: np.ndarray) -> Tensor:
        """``points``: ``(n, d_max+1)`` or ``(B, n, d_max+1)`` -> ``(e,)`` or ``(B, e)``."""
        points = np.asarray(points, dtype=np.float64)
        if points.shape[-1] != self.cfg.d_max + 1:
            raise nn.ShapeError(f"expected {self.cfg.d_max + 1} columns, got {points.shape[-1]}")
        if points.shape[-2] == 0:
            raise ValueError("point cloud has no points")
        if points.ndim == 2:
            return self(points[None])[0]
        h = self.normalize(points)
        h = nn.relu(self.stage1(h))
        h = nn.relu(self.stage2(h))
        h = nn.relu(self.stage3(h))
        h = self.pool_norm(nn.max_(h, axis=-2))
        h = nn.relu(self.fc1(h))
        return self.fc2(h)

    def encode(self, X: np.ndarray, y: np.ndarray) -> Tensor:
        return self(point_cloud(X, y, self.cfg.d_max))
