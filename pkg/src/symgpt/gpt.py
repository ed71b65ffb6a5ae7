"""Point-cloud-conditioned character-level GPT.

The input to the first block is ``W_p + W_D + X_eq W_t``: position embedding,
the dataset embedding from the T-net broadcast over every position, and the
token embedding. Output logits reuse the token embedding matrix (``h @ W_t^T``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from . import nn
from .expr import Vocabulary
from .nn import Embedding, LayerNorm, Linear, Module, Tensor
from .tnet import TNet, TNetConfig

CHECKPOINT_KIND = "symbolicgpt"


@dataclass
class GPTConfig:
    n_layers: int = 2
    n_heads: int = 4
    width: int = 64
    context: int = 202
    vocab_size: int = 0
    dropout: float = 0.0

    def __post_init__(self):
        if self.width % self.n_heads:
            raise ValueError(f"width {self.width} not divisible by n_heads {self.n_heads}")

    def to_dict(self) -> dict:
        return asdict(self)


class CausalSelfAttention(Module):
    def __init__(self, cfg: GPTConfig, rng: np.random.Generator):
        self.n_heads = cfg.n_heads
        self.width = cfg.width
        self.dropout = cfg.dropout
        self.qkv = Linear(cfg.width, 3 * cfg.width, rng, std=0.02)
        self.proj = Linear(cfg.width, cfg.width, rng, std=0.02 / np.sqrt(2 * cfg.n_layers))

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        B, T, W = x.shape
        H, hd = self.n_heads, W // self.n_heads
        qkv = self.qkv(x).reshape(B, T, 3, H, hd).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(hd))
        future = np.triu(np.ones((T, T), dtype=bool), k=1)
        att = nn.softmax(nn.masked_fill(att, future, -np.inf), axis=-1)
        att = nn.dropout(att, self.dropout, rng, self.training)
        y = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, W)
        return nn.dropout(self.proj(y), self.dropout, rng, self.training)


class Block(Module):
    """Pre-norm transformer block: attention then a 4x gelu feed-forward, both residual."""

    def __init__(self, cfg: GPTConfig, rng: np.random.Generator):
        self.dropout = cfg.dropout
        self.ln1 = LayerNorm(cfg.width)
        self.attn = CausalSelfAttention(cfg, rng)
        self.ln2 = LayerNorm(cfg.width)
        self.fc = Linear(cfg.width, 4 * cfg.width, rng, std=0.02)
        self.fc_out = Linear(4 * cfg.width, cfg.width, rng, std=0.02 / np.sqrt(2 * cfg.n_layers))

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        x = x + self.attn(self.ln1(x), rng)
        h = self.fc_out(nn.gelu(self.fc(self.ln2(x))))
        return x + nn.dropout(h, self.dropout, rng, self.training)


class GPT(Module):
    def __init__(self, cfg: GPTConfig, rng: np.random.Generator):
        if cfg.vocab_size < 1:
            raise ValueError("vocab_size must be set")
        self.cfg = cfg
        self.tok_emb = Embedding(cfg.vocab_size, cfg.width, rng)
        self.pos_emb = nn.parameter(rng.normal(0.0, 0.02, (cfg.context, cfg.width)))
        self.blocks = [Block(cfg, rng) for _ in range(cfg.n_layers)]
        self.ln_f = LayerNorm(cfg.width)

    def __call__(self, w_D: Tensor, ids: np.ndarray, rng=None) -> Tensor:
        """``w_D``: ``(B, width)``; ``ids``: ``(B, T)`` -> logits ``(B, T, vocab)``."""
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None]
        B, T = ids.shape
        if T > self.cfg.context:
            raise ValueError(f"sequence length {T} exceeds context {self.cfg.context}")
        w_D = nn.tensor.as_tensor(w_D)
        if w_D.ndim == 1:
            w_D = w_D.reshape(1, -1)
        x = self.tok_emb(ids) + self.pos_emb[:T] + w_D.reshape(w_D.shape[0], 1, self.cfg.width)
        x = nn.dropout(x, self.cfg.dropout, rng, self.training)
        for block in self.blocks:
            x = block(x, rng)
        h = self.ln_f(x)
        return h @ self.tok_emb.weight.transpose()


class SymbolicGPT(Module):
    """T-net encoder plus GPT decoder, trained jointly."""

    def __init__(self, tnet_cfg: TNetConfig, gpt_cfg: GPTConfig, vocab: Vocabulary, seed: int = 0):
        if tnet_cfg.e != gpt_cfg.width:
            raise ValueError(f"T-net embedding size {tnet_cfg.e} must equal GPT width {gpt_cfg.width}")
        if gpt_cfg.vocab_size == 0:
            gpt_cfg = replace(gpt_cfg, vocab_size=len(vocab))
        if gpt_cfg.vocab_size != len(vocab):
            raise ValueError("GPT vocab_size does not match vocabulary")
        rng = np.random.default_rng(seed)
        self.tnet_cfg = tnet_cfg
        self.gpt_cfg = gpt_cfg
        self.vocab = vocab
        self.tnet = TNet(tnet_cfg, rng)
        self.gpt = GPT(gpt_cfg, rng)
        # start w_D at zero: a freshly initialized T-net emits values ~100x the
        # token embeddings and would drown them out until training shrinks it
        self.tnet.fc2.weight.data[...] = 0.0
        self.tnet.fc2.bias.data[...] = 0.0

    @property
    def d_max(self) -> int:
        return self.tnet_cfg.d_max

    def __call__(self, points: np.ndarray, ids: np.ndarray, rng=None) -> Tensor:
        return self.gpt(self.tnet(points), ids, rng)

    def loss(self, points: np.ndarray, inputs: np.ndarray, targets: np.ndarray, rng=None) -> Tensor:
        logits = self(points, inputs, rng)
        return nn.cross_entropy(logits, targets, ignore_index=self.vocab.pad_id)

    def embed(self, points: np.ndarray) -> np.ndarray:
        with nn.no_grad():
            return self.tnet(points).data

    def next_token_logits(self, w_D: np.ndarray, ids: Sequence[int]) -> np.ndarray:
        with nn.no_grad():
            return self.gpt(w_D, np.asarray(ids)[None]).data[0, -1]

    def sample(self, w_D: np.ndarray, rng: np.random.Generator | None = None, top_k: int = 40,
               max_len: int = 200, prefix: Sequence[int] | None = None) -> str:
        """Top-k autoregressive decode from ``prefix`` (default: start token).

        ``top_k=1`` is greedy. Stops at the end token, after ``max_len``
        generated tokens, or at the context limit.
        """
        was_training = self.training
        self.eval()
        vocab = self.vocab
        ids = list(prefix) if prefix is not None else [vocab.sos_id]
        banned = [vocab.sos_id, vocab.pad_id]
        rng = np.random.default_rng(0) if rng is None else rng
        try:
            for _ in range(max_len):
                if len(ids) >= self.gpt_cfg.context:
                    break
                logits = self.next_token_logits(w_D, ids).copy()
                logits[banned] = -np.inf
                if top_k <= 1:
                    nxt = int(np.argmax(logits))
                else:
                    k = min(top_k, len(logits) - len(banned))
                    top = np.argpartition(-logits, k - 1)[:k]
                    top = top[np.argsort(-logits[top], kind="stable")]
                    z = logits[top] - logits[top].max()
                    p = np.exp(z)
                    p /= p.sum()
                    nxt = int(top[rng.choice(k, p=p)])
                ids.append(nxt)
                if nxt == vocab.eos_id:
                    break
        finally:
            self.train(was_training)
        return vocab.decode(ids)

    # -- persistence --------------------------------------------------------

    def checkpoint_meta(self) -> dict:
        return {
            "kind": CHECKPOINT_KIND,
            "tnet": self.tnet_cfg.to_dict(),
            "gpt": self.gpt_cfg.to_dict(),
            "vocab": self.vocab.chars(),
        }

    def save(self, path, extra_arrays: dict | None = None, extra_meta: dict | None = None):
        arrays = {f"param/{k}": v for k, v in self.state_dict().items()}
        if extra_arrays:
            arrays.update(extra_arrays)
        meta = self.checkpoint_meta()
        if extra_meta:
            meta.update(extra_meta)
        nn.save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path) -> tuple["SymbolicGPT", dict, dict]:
        """Returns the model, the checkpoint metadata, and any non-parameter arrays."""
        arrays, meta = nn.load_checkpoint(path)
        if meta.get("kind") != CHECKPOINT_KIND:
            raise nn.CheckpointError(f"{path}: not a SymbolicGPT checkpoint")
        model = cls(TNetConfig(**meta["tnet"]), GPTConfig(**meta["gpt"]), Vocabulary(meta["vocab"]))
        params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
        model.load_state_dict(params)
        rest = {k: v for k, v in arrays.items() if not k.startswith("param/")}
        return model, meta, rest
