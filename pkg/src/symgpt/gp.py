"""Genetic-programming symbolic regression baseline.

Individuals are prefix-order token lists (operator names, :class:`Var` and
:class:`Const` leaves), which makes subtree crossover and mutation simple
slice operations. The best individual is returned as an ordinary expression
tree so it evaluates exactly like model predictions do.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .expr import _BINARY_FN, _UNARY_FN, OPERATORS, Apply, Const, Expr, Var, iter_nodes

Program = list  # prefix tokens: str (operator) | Var | Const


@dataclass
class GPConfig:
    population: int = 1000
    generations: int = 10
    tournament: int = 7
    p_crossover: float = 0.9
    p_subtree_mutation: float = 0.05
    p_point_mutation: float = 0.05
    p_point_replace: float = 0.05
    max_depth: int = 8
    init_depth: tuple[int, int] = (2, 6)
    operators: tuple[str, ...] = ("add", "mul", "sin", "pow", "cos", "sqrt", "exp", "div", "sub", "log")
    parsimony: float = 1e-3
    c_min: float = -2.1
    c_max: float = 2.1
    seed: int = 0

    def __post_init__(self):
        self.operators = tuple(self.operators)
        self.init_depth = tuple(self.init_depth)
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if not 1 <= self.tournament <= self.population:
            raise ValueError("tournament size must be in [1, population]")
        unknown = [op for op in self.operators if op not in OPERATORS or op == "id"]
        if unknown:
            raise ValueError(f"unsupported operators: {unknown}")
        probs = (self.p_crossover, self.p_subtree_mutation, self.p_point_mutation)
        if min(probs) < 0 or sum(probs) > 1 + 1e-12:
            raise ValueError("variation probabilities must be >= 0 and sum to at most 1")
        if self.init_depth[0] < 0 or self.init_depth[1] > self.max_depth or self.init_depth[0] > self.init_depth[1]:
            raise ValueError("init_depth must satisfy 0 <= lo <= hi <= max_depth")

    def to_dict(self) -> dict:
        return asdict(self)


GP = GPConfig(population=1000, generations=10)
GP_MAX = GPConfig(population=5000, generations=20)


@dataclass
class GPResult:
    expr: Expr
    fitness: float
    mse: float
    trace: list[float] = field(default_factory=list)
    evaluations: int = 0


# ---------------------------------------------------------------------------
# Program helpers
# ---------------------------------------------------------------------------

def _arity(tok) -> int:
    return OPERATORS[tok] if isinstance(tok, str) else 0


def subtree_end(prog: Program, start: int) -> int:
    """Index one past the subtree rooted at ``start``."""
    need, i = 1, start
    while need:
        need += _arity(prog[i]) - 1
        i += 1
    return i


def program_depth(prog: Program) -> int:
    """Depth in edges (a lone leaf has depth 0)."""
    stack = []
    for tok in reversed(prog):
        a = _arity(tok)
        if a == 0:
            stack.append(0)
        else:
            stack.append(1 + max(stack.pop() for _ in range(a)))
    return stack[0]


def to_expr(prog: Program) -> Expr:
    stack: list[Expr] = []
    for tok in reversed(prog):
        a = _arity(tok)
        if a == 0:
            stack.append(tok)
        else:
            args = tuple(stack.pop() for _ in range(a))
            stack.append(Apply(tok, args))
    return stack[0]


def from_expr(e: Expr) -> Program:
    prog = []
    for node in iter_nodes(e):
        if isinstance(node, Apply):
            if node.op == "id":
                continue
            prog.append(node.op)
        elif isinstance(node, (Var, Const)):
            prog.append(node)
        else:
            raise ValueError("placeholders cannot appear in a GP program")
    return prog


def execute(prog: Program, X: np.ndarray) -> np.ndarray:
    """Vectorized evaluation; NaN where undefined, like :func:`expr.evaluate_batch`."""
    n = X.shape[0]
    stack = []
    with np.errstate(all="ignore"):
        for tok in reversed(prog):
            if isinstance(tok, Var):
                stack.append(X[:, tok.index - 1])
                continue
            if isinstance(tok, Const):
                stack.append(np.full(n, tok.value))
                continue
            if OPERATORS[tok] == 1:
                out = _UNARY_FN[tok](stack.pop())
            else:
                a = stack.pop()
                out = _BINARY_FN[tok](a, stack.pop())
            if not np.isfinite(out).all():
                out = np.where(np.isfinite(out), out, np.nan)
            stack.append(out)
    return stack[0]


# ---------------------------------------------------------------------------
# Evolution
# ---------------------------------------------------------------------------

class _Evolver:
    def __init__(self, X: np.ndarray, y: np.ndarray, cfg: GPConfig):
        self.X, self.y, self.cfg = X, y, cfg
        self.d = X.shape[1]
        self.rng = np.random.default_rng(cfg.seed)
        self.ops = list(cfg.operators)
        self.by_arity = {a: [op for op in self.ops if OPERATORS[op] == a] for a in (1, 2)}
        self.cache: dict[tuple, tuple[float, float]] = {}
        self.evaluations = 0

    def terminal(self):
        j = int(self.rng.integers(self.d + 1))
        if j == self.d:
            return Const(float(self.rng.uniform(self.cfg.c_min, self.cfg.c_max)))
        return Var(j + 1)

    def random_program(self, depth: int, full: bool, root: bool = True) -> Program:
        """Full or grow tree of at most ``depth``; the root is an operator unless ``depth`` is 0."""
        leaf_p = (self.d + 1) / (self.d + 1 + len(self.ops))
        if depth == 0 or (not full and not root and self.rng.random() < leaf_p):
            return [self.terminal()]
        op = self.ops[int(self.rng.integers(len(self.ops)))]
        prog = [op]
        for _ in range(OPERATORS[op]):
            prog += self.random_program(depth - 1, full, root=False)
        return prog

    def fitness(self, prog: Program) -> tuple[float, float]:
        """``(penalized fitness, raw MSE)``; undefined programs score ``inf``."""
        key = tuple(prog)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        self.evaluations += 1
        pred = execute(prog, self.X)
        if np.isfinite(pred).all():
            with np.errstate(over="ignore"):
                mse = float(np.mean((pred - self.y) ** 2))
        else:
            mse = math.inf
        out = (mse + self.cfg.parsimony * len(prog), mse) if np.isfinite(mse) else (math.inf, math.inf)
        self.cache[key] = out
        return out

    def pick_point(self, prog: Program) -> int:
        # bias toward internal nodes as is customary for subtree operators
        internal = [i for i, t in enumerate(prog) if isinstance(t, str)]
        if internal and self.rng.random() < 0.9:
            return internal[int(self.rng.integers(len(internal)))]
        leaves = [i for i, t in enumerate(prog) if not isinstance(t, str)]
        return leaves[int(self.rng.integers(len(leaves)))]

    def crossover(self, parent: Program, donor: Program) -> Program:
        i = self.pick_point(parent)
        j = self.pick_point(donor)
        return parent[:i] + donor[j:subtree_end(donor, j)] + parent[subtree_end(parent, i):]

    def subtree_mutation(self, parent: Program) -> Program:
        lo, hi = self.cfg.init_depth
        donor = self.random_program(int(self.rng.integers(lo, hi + 1)), full=False)
        return self.crossover(parent, donor)

    def point_mutation(self, parent: Program) -> Program:
        prog = list(parent)
        for i, tok in enumerate(prog):
            if self.rng.random() >= self.cfg.p_point_replace:
                continue
            a = _arity(tok)
            if a == 0:
                prog[i] = self.terminal()
            else:
                choices = self.by_arity[a]
                prog[i] = choices[int(self.rng.integers(len(choices)))]
        return prog

    def tournament(self, fits: np.ndarray) -> int:
        idx = self.rng.integers(len(fits), size=self.cfg.tournament)
        return int(idx[np.argmin(fits[idx])])

    def initial_population(self) -> list[Program]:
        lo, hi = self.cfg.init_depth
        depths = list(range(lo, hi + 1))
        pop = []
        for i in range(self.cfg.population):
            depth = depths[i % len(depths)]
            pop.append(self.random_program(depth, full=(i // len(depths)) % 2 == 0))
        return pop


def gp_regress(X: np.ndarray, y: np.ndarray, cfg: GPConfig | None = None) -> GPResult:
    """Evolve an expression for ``y ~ f(X)``.

    Fitness is training MSE plus ``parsimony * size``. The best individual of
    each generation is copied unchanged into the next, so the returned trace
    of best fitness values never increases.
    """
    cfg = cfg or GPConfig()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] < 1 or X.shape[0] != y.shape[0]:
        raise ValueError("need at least one point and matching X / y lengths")
    ev = _Evolver(X, y, cfg)
    pop = ev.initial_population()
    scores = [ev.fitness(p) for p in pop]
    trace = []
    p_cx = cfg.p_crossover
    p_sub = p_cx + cfg.p_subtree_mutation
    p_pt = p_sub + cfg.p_point_mutation
    for gen in range(cfg.generations):
        fits = np.array([s[0] for s in scores])
        elite = int(np.argmin(fits))
        trace.append(float(fits[elite]))
        if gen == cfg.generations - 1:
            break
        children = [pop[elite]]
        while len(children) < cfg.population:
            parent = pop[ev.tournament(fits)]
            u = ev.rng.random()
            if u < p_cx:
                child = ev.crossover(parent, pop[ev.tournament(fits)])
            elif u < p_sub:
                child = ev.subtree_mutation(parent)
            elif u < p_pt:
                child = ev.point_mutation(parent)
            else:
                child = list(parent)
            if program_depth(child) > cfg.max_depth:
                child = list(parent)
            children.append(child)
        pop = children
        scores = [ev.fitness(p) for p in pop]
    best = int(np.argmin([s[0] for s in scores]))
    return GPResult(to_expr(pop[best]), scores[best][0], scores[best][1], trace, ev.evaluations)
