"""Random equation and dataset generation.

An equation starts as a blank balanced binary tree of fixed depth. Nodes are
decorated with operators and variables, some subtrees are cut short by
terminal nodes, and random constants are inserted as multiplicative factors
and additive biases. The resulting expression is then sampled on random
points to form one regression instance.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .expr import (
    OPERATORS,
    Apply,
    Const,
    Expr,
    Var,
    collapse_id,
    constants,
    evaluate_batch,
    iter_nodes,
    max_variable,
    parse,
    round_constants,
    skeleton_string,
    to_infix_string,
)

log = logging.getLogger(__name__)

MAX_DRAW_FACTOR = 100
MAX_EQUATION_ATTEMPTS = 10_000


class GenerationRejected(RuntimeError):
    """The expression has too few valid points in the sampling domain."""


@dataclass
class GenConfig:
    """Generator settings.

    ``d`` and ``n_points`` are either a fixed integer or an inclusive
    ``(low, high)`` range drawn uniformly per instance. ``x_domain`` is a
    union of intervals applied independently to every coordinate, so the
    sampled region is the product of that union over the ``d`` axes.
    """

    k: int = 4
    d: int | tuple[int, int] = 1
    operators: tuple[str, ...] = tuple(OPERATORS)
    r: float = 0.5
    c_min: float = -2.1
    c_max: float = 2.1
    n_points: int | tuple[int, int] = 30
    x_domain: tuple[tuple[float, float], ...] = ((-3.0, 3.0),)
    terminal_prob: float = 0.2
    seed: int = 0
    const_digits: int = 4
    max_len: int = 200
    y_abs_max: float | None = 1e6

    def __post_init__(self):
        self.operators = tuple(self.operators)
        self.x_domain = tuple(tuple(map(float, iv)) for iv in self.x_domain)
        if isinstance(self.d, list):
            self.d = tuple(self.d)
        if isinstance(self.n_points, list):
            self.n_points = tuple(self.n_points)
        self.validate()

    def validate(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.c_min > self.c_max:
            raise ValueError("c_min must not exceed c_max")
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("r must lie in [0, 1]")
        if not 0.0 <= self.terminal_prob <= 1.0:
            raise ValueError("terminal_prob must lie in [0, 1]")
        lo, _ = _as_range(self.n_points)
        if lo < 1:
            raise ValueError("n_points must be >= 1")
        dlo, _ = _as_range(self.d)
        if dlo < 1:
            raise ValueError("d must be >= 1")
        if not self.x_domain or any(b < a for a, b in self.x_domain):
            raise ValueError("x_domain must be a nonempty list of (low, high) intervals")
        unknown = set(self.operators) - set(OPERATORS)
        if unknown or not self.operators:
            raise ValueError(f"bad operator set: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GenConfig":
        return cls(**data)


def _as_range(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


@dataclass
class Instance:
    X: np.ndarray
    y: np.ndarray
    expr: Expr

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def eq(self) -> str:
        return to_infix_string(self.expr)

    @property
    def skeleton(self) -> str:
        return skeleton_string(self.expr)

    def to_record(self) -> dict:
        return {
            "d": self.d,
            "n": self.n,
            "X": self.X.tolist(),
            "y": self.y.tolist(),
            "eq": self.eq,
            "skeleton": self.skeleton,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Instance":
        X = np.asarray(rec["X"], dtype=np.float64).reshape(rec["n"], rec["d"])
        y = np.asarray(rec["y"], dtype=np.float64)
        if y.shape != (rec["n"],):
            raise ValueError(f"y has shape {y.shape}, expected ({rec['n']},)")
        if not np.isfinite(y).all() or not np.isfinite(X).all():
            raise ValueError("non-finite values in record")
        expr = parse(rec["eq"])
        if max_variable(expr) > rec["d"]:
            raise ValueError(f"equation {rec['eq']!r} uses more than {rec['d']} variables")
        return cls(X=X, y=y, expr=expr)


# ---------------------------------------------------------------------------
# Templates and decoration
# ---------------------------------------------------------------------------

@dataclass
class TemplateNode:
    left: Optional["TemplateNode"] = None
    right: Optional["TemplateNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def generate_template(k: int) -> TemplateNode:
    """Blank, perfectly balanced binary tree with ``k`` levels."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        return TemplateNode()
    return TemplateNode(generate_template(k - 1), generate_template(k - 1))


def template_counts(t: TemplateNode) -> tuple[int, int]:
    """(internal nodes, leaves)."""
    if t.is_leaf:
        return 0, 1
    li, ll = template_counts(t.left)
    ri, rl = template_counts(t.right)
    return li + ri + 1, ll + rl


def _random_var(d: int, rng: np.random.Generator) -> Var:
    return Var(int(rng.integers(1, d + 1)))


def decorate(template: TemplateNode, cfg: GenConfig, rng: np.random.Generator, d: int | None = None) -> Expr:
    """Fill a template with variables (leaves) and operators (internal nodes).

    Terminal marking is decided before the operator is drawn; a terminal node
    becomes a single variable leaf. Unary operators keep only the left child.
    The result may contain ``id`` nodes.
    """
    d = _as_range(cfg.d)[0] if d is None else d
    ops = cfg.operators

    def go(node: TemplateNode) -> Expr:
        if node.is_leaf:
            return _random_var(d, rng)
        if rng.random() < cfg.terminal_prob:
            return _random_var(d, rng)
        op = ops[int(rng.integers(len(ops)))]
        if OPERATORS[op] == 1:
            return Apply(op, (go(node.left),))
        return Apply(op, (go(node.left), go(node.right)))

    return go(template)


@dataclass
class InsertionStats:
    nodes: int = 0
    multiplicative: int = 0
    additive: int = 0

    def merge(self, other: "InsertionStats"):
        self.nodes += other.nodes
        self.multiplicative += other.multiplicative
        self.additive += other.additive


def insert_constants(e: Expr, cfg: GenConfig, rng: np.random.Generator,
                     stats: InsertionStats | None = None) -> Expr:
    """Wrap each node as ``c1*node`` and/or ``node + c2``, each with probability ``r``."""

    def go(node: Expr) -> Expr:
        if isinstance(node, Apply):
            node = Apply(node.op, tuple(go(a) for a in node.args))
        if stats is not None:
            stats.nodes += 1
        c1 = rng.uniform(cfg.c_min, cfg.c_max)
        if rng.random() < cfg.r:
            node = Apply("mul", (Const(float(c1)), node))
            if stats is not None:
                stats.multiplicative += 1
        c2 = rng.uniform(cfg.c_min, cfg.c_max)
        if rng.random() < cfg.r:
            node = Apply("add", (node, Const(float(c2))))
            if stats is not None:
                stats.additive += 1
        return node

    return go(e)


# ---------------------------------------------------------------------------
# Dataset sampling
# ---------------------------------------------------------------------------

def sample_points(domain: Sequence[tuple[float, float]], n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from ``union(domain)^d``, interval chosen per coordinate by length."""
    lows = np.array([a for a, _ in domain])
    widths = np.array([b - a for a, b in domain])
    total = widths.sum()
    if len(domain) == 1:
        return lows[0] + widths[0] * rng.random((n, d))
    p = widths / total if total > 0 else np.full(len(domain), 1.0 / len(domain))
    which = rng.choice(len(domain), size=(n, d), p=p)
    return lows[which] + widths[which] * rng.random((n, d))


def sample_dataset(e: Expr, cfg: GenConfig, rng: np.random.Generator,
                   n: int | None = None, d: int | None = None) -> Instance:
    """Draw ``n`` points where ``e`` is defined; invalid draws are redrawn.

    Points with ``|y| > cfg.y_abs_max`` count as invalid.
    """
    n = _as_range(cfg.n_points)[0] if n is None else n
    d = max(_as_range(cfg.d)[0], max_variable(e)) if d is None else d
    budget = MAX_DRAW_FACTOR * n
    drawn = 0
    xs, ys = [], []
    have = 0
    while have < n and drawn < budget:
        m = min(max(n - have, 16), budget - drawn)
        X = sample_points(cfg.x_domain, m, d, rng)
        drawn += m
        y = evaluate_batch(e, X)
        ok = np.isfinite(y)
        if cfg.y_abs_max is not None:
            ok &= np.abs(np.where(ok, y, 0.0)) <= cfg.y_abs_max
        if ok.any():
            xs.append(X[ok])
            ys.append(y[ok])
            have += int(ok.sum())
    if have < n:
        raise GenerationRejected(f"only {have} of {n} valid points after {drawn} draws for {to_infix_string(e)}")
    X = np.concatenate(xs)[:n]
    y = np.concatenate(ys)[:n]
    return Instance(X=X, y=y, expr=e)


# ---------------------------------------------------------------------------
# Whole instances and corpora
# ---------------------------------------------------------------------------

def skeleton_hash(skeleton: str) -> str:
    return hashlib.sha1(skeleton.encode()).hexdigest()


@dataclass
class GenStats:
    count: int = 0
    equations_tried: int = 0
    rejected: int = 0
    templates: Counter = field(default_factory=Counter)
    insertion: InsertionStats = field(default_factory=InsertionStats)
    operators: Counter = field(default_factory=Counter)
    n_constants: int = 0
    y_min: float = float("inf")
    y_max: float = float("-inf")
    d_counts: Counter = field(default_factory=Counter)
    n_min: int = 0
    n_max: int = 0
    nonfinite_y: int = 0

    def record(self, inst: Instance):
        self.count += 1
        for node in iter_nodes(inst.expr):
            if isinstance(node, Apply):
                self.operators[node.op] += 1
        self.n_constants += len(constants(inst.expr))
        self.y_min = min(self.y_min, float(inst.y.min()))
        self.y_max = max(self.y_max, float(inst.y.max()))
        self.d_counts[inst.d] += 1
        self.n_min = inst.n if self.count == 1 else min(self.n_min, inst.n)
        self.n_max = max(self.n_max, inst.n)
        self.nonfinite_y += int((~np.isfinite(inst.y)).sum())

    def merge(self, other: "GenStats"):
        if other.count:
            self.n_min = other.n_min if not self.count else min(self.n_min, other.n_min)
        self.count += other.count
        self.equations_tried += other.equations_tried
        self.rejected += other.rejected
        self.templates.update(other.templates)
        self.insertion.merge(other.insertion)
        self.operators.update(other.operators)
        self.n_constants += other.n_constants
        self.y_min = min(self.y_min, other.y_min)
        self.y_max = max(self.y_max, other.y_max)
        self.d_counts.update(other.d_counts)
        self.n_max = max(self.n_max, other.n_max)
        self.nonfinite_y += other.nonfinite_y

    def to_dict(self) -> dict:
        if not self.count:
            return {}
        ins = self.insertion
        return {
            "count": self.count,
            "equations_tried": self.equations_tried,
            "rejected": self.rejected,
            "templates": {f"{i}/{l}": c for (i, l), c in sorted(self.templates.items())},
            "insertion": {
                "nodes": ins.nodes,
                "multiplicative": ins.multiplicative,
                "additive": ins.additive,
                "multiplicative_rate": ins.multiplicative / ins.nodes if ins.nodes else 0.0,
                "additive_rate": ins.additive / ins.nodes if ins.nodes else 0.0,
            },
            "operators": dict(sorted(self.operators.items())),
            "constants_total": self.n_constants,
            "constants_per_equation": self.n_constants / self.count,
            "y_min": self.y_min,
            "y_max": self.y_max,
            "d_counts": {str(k): v for k, v in sorted(self.d_counts.items())},
            "n_min": self.n_min,
            "n_max": self.n_max,
            "nonfinite_y": self.nonfinite_y,
        }


def random_equation(cfg: GenConfig, rng: np.random.Generator, d: int,
                    stats: GenStats | None = None) -> Expr:
    template = generate_template(cfg.k)
    if stats is not None:
        stats.templates[template_counts(template)] += 1
    e = collapse_id(decorate(template, cfg, rng, d))
    e = insert_constants(e, cfg, rng, stats.insertion if stats is not None else None)
    return round_constants(e, cfg.const_digits)


def generate_instance(cfg: GenConfig, rng: np.random.Generator, stats: GenStats | None = None,
                      exclude: Iterable[str] = ()) -> Instance:
    """One instance; equations that fail sampling, overflow ``max_len`` or
    hit an excluded skeleton hash are discarded and redrawn."""
    exclude = exclude if isinstance(exclude, (set, frozenset)) else set(exclude)
    dlo, dhi = _as_range(cfg.d)
    nlo, nhi = _as_range(cfg.n_points)
    d = int(rng.integers(dlo, dhi + 1))
    n = int(rng.integers(nlo, nhi + 1))
    for _ in range(MAX_EQUATION_ATTEMPTS):
        if stats is not None:
            stats.equations_tried += 1
        e = random_equation(cfg, rng, d, stats)
        skel = skeleton_string(e)
        if len(skel) > cfg.max_len or (exclude and skeleton_hash(skel) in exclude):
            if stats is not None:
                stats.rejected += 1
            continue
        try:
            inst = sample_dataset(e, cfg, rng, n=n, d=d)
        except GenerationRejected:
            if stats is not None:
                stats.rejected += 1
            continue
        if stats is not None:
            stats.record(inst)
        return inst
    raise RuntimeError(f"no valid equation after {MAX_EQUATION_ATTEMPTS} attempts")


def instance_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, index])


def _generate_chunk(args) -> tuple[list[dict], GenStats]:
    cfg, indices, stream, exclude = args
    stats = GenStats()
    records = []
    for i in indices:
        inst = generate_instance(cfg, instance_rng(cfg.seed, i, stream), stats, exclude)
        records.append(inst.to_record())
    return records, stats


def generate_instances(cfg: GenConfig, count: int, stream: int = 0, exclude: Iterable[str] = (),
                       workers: int = 1) -> tuple[list[dict], GenStats]:
    """Records for ``count`` instances; instance ``i`` uses its own RNG stream."""
    exclude = frozenset(exclude)
    if workers <= 1 or count < 2 * workers:
        return _generate_chunk((cfg, range(count), stream, exclude))
    bounds = np.linspace(0, count, workers + 1).astype(int)
    jobs = [(cfg, range(bounds[j], bounds[j + 1]), stream, exclude) for j in range(workers)]
    records: list[dict] = []
    stats = GenStats()
    with ProcessPoolExecutor(workers) as pool:
        for recs, st in pool.map(_generate_chunk, jobs):
            records.extend(recs)
            stats.merge(st)
    return records, stats


def write_jsonl(records: Iterable[dict], out: Path):
    out = Path(out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w") as f:
            for rec in records:
                f.write(json.dumps(rec, separators=(",", ":")))
                f.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write corpus {out}: {exc}") from exc


def stats_path(out: Path) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".stats.json")


def generate_corpus(cfg: GenConfig, count: int, out: Path, stream: int = 0,
                    exclude: Iterable[str] = (), workers: int = 1) -> tuple[dict, set[str]]:
    """Write ``count`` instances to ``out`` as JSONL plus a ``.stats.json`` sidecar.

    Returns the summary statistics and the set of skeleton hashes written, to
    be passed as ``exclude`` when generating the next split.
    """
    records, stats = generate_instances(cfg, count, stream, exclude, workers)
    write_jsonl(records, out)
    summary = stats.to_dict()
    try:
        stats_path(out).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write stats for {out}: {exc}") from exc
    hashes = {skeleton_hash(r["skeleton"]) for r in records}
    log.info("wrote %d instances to %s", count, out)
    return summary, hashes


def generate_splits(cfgs: dict[str, GenConfig], counts: dict[str, int], out_dir: Path,
                    workers: int = 1) -> dict[str, dict]:
    """Generate splits in order with no skeleton shared between any two of them."""
    out_dir = Path(out_dir)
    seen: set[str] = set()
    summaries = {}
    for stream, (name, cfg) in enumerate(cfgs.items()):
        summary, hashes = generate_corpus(cfg, counts[name], out_dir / f"{name}.jsonl",
                                          stream=stream, exclude=seen, workers=workers)
        seen |= hashes
        summaries[name] = summary
    return summaries


def read_corpus(path: Path) -> list[Instance]:
    path = Path(path)
    out = []
    try:
        with path.open() as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    out.append(Instance.from_record(json.loads(line)))
                except (ValueError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad record: {exc}") from exc
    except OSError as exc:
        raise OSError(f"cannot read corpus {path}: {exc}") from exc
    return out
