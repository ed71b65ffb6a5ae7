"""Joint training of the T-net and GPT on skeleton next-character prediction."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .eqgen import Instance
from .expr import UnknownToken, Vocabulary
from .gpt import GPTConfig, SymbolicGPT
from .tnet import TNetConfig, batch_point_clouds, point_cloud

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 4
    batch_size: int = 64
    lr: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.0
    warmup_steps: int = 20
    min_lr_ratio: float = 0.1
    grad_clip: float = 1.0
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncodedCorpus:
    """Point clouds and padded token ids, prepared once per corpus."""

    clouds: list[np.ndarray]
    tokens: list[list[int]]

    def __len__(self):
        return len(self.clouds)

    def batch(self, idx: Sequence[int], pad_id: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        points = batch_point_clouds([self.clouds[i] for i in idx])
        seqs = [self.tokens[i] for i in idx]
        L = max(len(s) for s in seqs)
        ids = np.full((len(seqs), L), pad_id, dtype=np.intp)
        for j, s in enumerate(seqs):
            ids[j, : len(s)] = s
        return points, ids[:, :-1], ids[:, 1:]


def encode_corpus(instances: Sequence[Instance], vocab: Vocabulary, d_max: int, context: int) -> EncodedCorpus:
    """Validate and pre-encode a corpus; raises ``ValueError`` naming the bad record."""
    clouds, tokens = [], []
    for i, inst in enumerate(instances):
        if inst.d > d_max:
            raise ValueError(f"instance {i}: d={inst.d} exceeds d_max={d_max}")
        if inst.n < 1:
            raise ValueError(f"instance {i}: no points")
        try:
            ids = vocab.encode(inst.skeleton)
        except UnknownToken as exc:
            raise ValueError(f"instance {i}: {exc}") from None
        if len(ids) - 1 > context:
            raise ValueError(f"instance {i}: skeleton of {len(inst.skeleton)} characters does not fit context {context}")
        clouds.append(point_cloud(inst.X, inst.y, d_max))
        tokens.append(ids)
    return EncodedCorpus(clouds, tokens)


def evaluate_loss(model: SymbolicGPT, data: EncodedCorpus, batch_size: int = 64) -> float:
    """Token-weighted mean cross-entropy over a corpus (no gradients)."""
    pad = model.vocab.pad_id
    total, count = 0.0, 0
    was_training = model.training
    model.eval()
    try:
        with nn.no_grad():
            for start in range(0, len(data), batch_size):
                idx = range(start, min(start + batch_size, len(data)))
                points, inputs, targets = data.batch(idx, pad)
                n_tok = int((targets != pad).sum())
                total += model.loss(points, inputs, targets).item() * n_tok
                count += n_tok
    finally:
        model.train(was_training)
    return total / count if count else float("nan")


@dataclass
class TrainResult:
    model: SymbolicGPT
    history: list[dict] = field(default_factory=list)
    best_val: float = float("inf")
    best_epoch: int = -1


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, 7, epoch]).permutation(n)


def _save_state(path: Path, model: SymbolicGPT, opt: nn.Adam, cfg: TrainConfig, epoch: int, step: int,
                best_val: float, best_epoch: int):
    extra = {f"opt/{k}": v for k, v in opt.state_dict().items()}
    model.save(path, extra, {"train": cfg.to_dict(), "epoch": epoch, "step": step,
                             "best_val": best_val, "best_epoch": best_epoch})


def train(train_set: Sequence[Instance], val_set: Sequence[Instance], out_dir: Path | None = None,
          tnet_cfg: TNetConfig | None = None, gpt_cfg: GPTConfig | None = None,
          cfg: TrainConfig | None = None, vocab: Vocabulary | None = None,
          resume: bool = False, model: SymbolicGPT | None = None) -> TrainResult:
    """Train end to end and keep the best-validation weights.

    With ``out_dir`` set, writes ``last.npz`` (weights plus optimizer state,
    used by ``resume``), ``best.npz`` and ``metrics.jsonl``. The model in the
    returned result holds the best-validation weights.
    """
    cfg = cfg or TrainConfig()
    if model is None:
        vocab = vocab or Vocabulary()
        tnet_cfg = tnet_cfg or TNetConfig()
        gpt_cfg = gpt_cfg or GPTConfig(vocab_size=len(vocab))
        model = SymbolicGPT(tnet_cfg, gpt_cfg, vocab, seed=cfg.seed)
    vocab = model.vocab
    if not len(train_set):
        raise ValueError("training corpus is empty")
    train_data = encode_corpus(train_set, vocab, model.d_max, model.gpt_cfg.context)
    val_data = encode_corpus(val_set, vocab, model.d_max, model.gpt_cfg.context) if len(val_set) else None

    params = model.named_parameters()
    opt = nn.Adam(params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    steps_per_epoch = math.ceil(len(train_data) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)

    out_dir = Path(out_dir) if out_dir is not None else None
    result = TrainResult(model)
    start_epoch, step = 0, 0
    best_state = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.jsonl"
        if resume and (out_dir / "last.npz").exists():
            loaded, meta, rest = SymbolicGPT.load(out_dir / "last.npz")
            model.load_state_dict(loaded.state_dict())
            opt.load_state_dict({k[len("opt/"):]: v for k, v in rest.items() if k.startswith("opt/")})
            start_epoch, step = meta["epoch"] + 1, meta["step"]
            result.best_val, result.best_epoch = meta["best_val"], meta["best_epoch"]
            if (out_dir / "best.npz").exists():
                best_state = SymbolicGPT.load(out_dir / "best.npz")[0].state_dict()
            result.history = [json.loads(line) for line in metrics_path.read_text().splitlines() if line.strip()]
            log.info("resuming at epoch %d, step %d", start_epoch, step)
        elif metrics_path.exists():
            metrics_path.unlink()

    def emit(record: dict):
        result.history.append(record)
        if out_dir is not None:
            with (out_dir / "metrics.jsonl").open("a") as f:
                f.write(json.dumps(record) + "\n")

    model.train()
    pad = vocab.pad_id
    for epoch in range(start_epoch, cfg.epochs):
        if step >= total_steps:
            break
        order = _epoch_order(cfg.seed, epoch, len(train_data))
        epoch_loss, epoch_batches = 0.0, 0
        t0 = time.perf_counter()
        for b in range(steps_per_epoch):
            if step >= total_steps:
                break
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            points, inputs, targets = train_data.batch(idx, pad)
            lr = nn.warmup_cosine(step, total_steps, cfg.lr, cfg.warmup_steps, cfg.min_lr_ratio)
            opt.zero_grad()
            drop_rng = np.random.default_rng([cfg.seed, 11, step]) if model.gpt_cfg.dropout > 0 else None
            loss = model.loss(points, inputs, targets, drop_rng)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite training loss at step {step}")
            nn.backward(loss, opt.params.values())
            gnorm = nn.clip_grad_norm(opt.params.values(), cfg.grad_clip)
            opt.step(lr)
            emit({"step": step, "epoch": epoch, "train_loss": loss.item(), "lr": lr, "grad_norm": gnorm})
            epoch_loss += loss.item()
            epoch_batches += 1
            step += 1
        record = {"epoch": epoch, "step": step, "train_loss": epoch_loss / max(1, epoch_batches),
                  "seconds": time.perf_counter() - t0}
        if val_data is not None:
            val = evaluate_loss(model, val_data, cfg.batch_size)
            record["val_loss"] = val
            if not np.isfinite(val):
                emit(record)
                raise TrainingDiverged(f"validation loss is {val} after epoch {epoch}")
            if val < result.best_val:
                result.best_val, result.best_epoch = val, epoch
                best_state = model.state_dict()
                if out_dir is not None:
                    model.save(out_dir / "best.npz", extra_meta={"epoch": epoch, "val_loss": val})
        emit(record)
        log.info("epoch %d: train %.4f val %s", epoch, record["train_loss"], record.get("val_loss"))
        if out_dir is not None:
            _save_state(out_dir / "last.npz", model, opt, cfg, epoch, step, result.best_val, result.best_epoch)

    if best_state is not None:
        model.load_state_dict(best_state)
    elif out_dir is not None:
        model.save(out_dir / "best.npz", extra_meta={"epoch": cfg.epochs - 1})
    model.eval()
    return result
