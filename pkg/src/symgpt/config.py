"""Experiment configuration: presets for the standard experiments plus JSON overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .eqgen import GenConfig
from .gp import GP, GP_MAX, GPConfig
from .gpt import GPTConfig
from .pipeline import InferOptions
from .tnet import TNetConfig
from .training import TrainConfig

TRAIN_DOMAIN = ((-3.0, 3.0),)
TEST_DOMAIN = ((-5.0, -3.0), (3.0, 5.0))
BASE_COUNTS = {"train": 10_000, "val": 1_000, "test": 1_000}
PRESETS = {
    # name: (d, n_points)
    "one_var": (1, 30),
    "two_var": (2, 200),
    "three_var": (3, 500),
    "general": ((1, 5), (10, 200)),
}
EXPERIMENTS = tuple(PRESETS) + ("custom",)
METHODS = ("symbolicgpt", "gp", "gp_max", "mean")


@dataclass
class ExperimentConfig:
    name: str = "one_var"
    seed: int = 0
    scale: float = 1.0
    out: str = "runs/experiment"
    counts: dict = field(default_factory=lambda: dict(BASE_COUNTS))
    train_gen: GenConfig = field(default_factory=GenConfig)
    val_gen: GenConfig = field(default_factory=GenConfig)
    test_gen: GenConfig = field(default_factory=GenConfig)
    tnet: TNetConfig = field(default_factory=TNetConfig)
    gpt: GPTConfig = field(default_factory=GPTConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferOptions = field(default_factory=InferOptions)
    methods: tuple[str, ...] = ("symbolicgpt", "gp", "gp_max")
    gp: GPConfig = field(default_factory=lambda: replace(GP))
    gp_max: GPConfig = field(default_factory=lambda: replace(GP_MAX))
    bench_limit: int | None = None
    sweep: tuple[int, ...] = (25, 50, 100, 250, 500)
    workers: int = 1

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.sweep = tuple(self.sweep)
        if self.name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.name!r}; choose from {EXPERIMENTS}")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.tnet.e != self.gpt.width:
            raise ValueError("tnet.e must equal gpt.width")

    def split_counts(self) -> dict[str, int]:
        return {k: max(1, round(v * self.scale)) for k, v in self.counts.items()}

    def gen_configs(self) -> dict[str, GenConfig]:
        """Per-split generator configs, with the experiment seed applied."""
        return {
            "train": replace(self.train_gen, seed=self.seed),
            "val": replace(self.val_gen, seed=self.seed),
            "test": replace(self.test_gen, seed=self.seed),
        }

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def to_dict(self) -> dict:
        return asdict(self)


def preset(name: str) -> ExperimentConfig:
    if name == "custom":
        return ExperimentConfig(name=name, out=f"runs/{name}")
    if name not in PRESETS:
        raise ValueError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
    d, n = PRESETS[name]
    train = GenConfig(d=d, n_points=n, x_domain=TRAIN_DOMAIN)
    test = GenConfig(d=d, n_points=n, x_domain=TEST_DOMAIN)
    d_max = d if isinstance(d, int) else d[1]
    return ExperimentConfig(name=name, out=f"runs/{name}", train_gen=train, val_gen=replace(train),
                            test_gen=test, tnet=TNetConfig(d_max=d_max))


_SECTIONS = {
    "train_gen": GenConfig,
    "val_gen": GenConfig,
    "test_gen": GenConfig,
    "tnet": TNetConfig,
    "gpt": GPTConfig,
    "train": TrainConfig,
    "infer": InferOptions,
    "gp": GPConfig,
    "gp_max": GPConfig,
}


def _override(obj, updates: dict, where: str):
    known = {f.name for f in fields(obj)}
    unknown = set(updates) - known
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    return replace(obj, **updates)


def from_dict(data: dict) -> ExperimentConfig:
    """Start from the named preset and apply overrides.

    ``gen`` applies to all three splits before the per-split sections.
    """
    data = dict(data)
    cfg = preset(data.pop("name", "one_var"))
    common = data.pop("gen", None)
    if common:
        for split in ("train_gen", "val_gen", "test_gen"):
            cfg = replace(cfg, **{split: _override(getattr(cfg, split), common, "gen")})
    updates = {}
    for key, value in data.items():
        if key in _SECTIONS:
            updates[key] = _override(getattr(cfg, key), value, key)
        elif key == "counts":
            updates[key] = {**cfg.counts, **value}
        else:
            updates[key] = value
    return _override(cfg, updates, "config")


def load_config(path: Path | None) -> ExperimentConfig:
    if path is None:
        return preset("one_var")
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON: {exc}") from exc
    return from_dict(data)
