"""Expression trees over the operator set used by the generator and the model.

Trees are immutable. The canonical text form is fully parenthesized infix
with named unary functions, e.g. ``sin((C*x1))``; :func:`parse` inverts it
and also accepts ordinary precedence-based input.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Sequence, Union

import numpy as np

OPERATORS: dict[str, int] = {
    "id": 1,
    "add": 2,
    "mul": 2,
    "sin": 1,
    "pow": 2,
    "cos": 1,
    "sqrt": 1,
    "exp": 1,
    "div": 2,
    "sub": 2,
    "log": 1,
}
UNARY = tuple(name for name, arity in OPERATORS.items() if arity == 1)
BINARY = tuple(name for name, arity in OPERATORS.items() if arity == 2)

SYMBOLS = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}
_SYMBOL_TO_OP = {v: k for k, v in SYMBOLS.items()}

PLACEHOLDER = "C"


class DomainError(ArithmeticError):
    """Raised when an expression has no finite real value at a point."""


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownToken(ValueError):
    pass


@dataclass(frozen=True)
class Var:
    index: int

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"variable index must be >= 1, got {self.index}")


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Placeholder:
    pass


@dataclass(frozen=True)
class Apply:
    op: str
    args: tuple

    def __post_init__(self):
        arity = OPERATORS.get(self.op)
        if arity is None:
            raise ValueError(f"unknown operator {self.op!r}")
        if len(self.args) != arity:
            raise ValueError(f"{self.op} takes {arity} argument(s), got {len(self.args)}")


Expr = Union[Var, Const, Placeholder, Apply]


def apply(op: str, *args: Expr) -> Apply:
    return Apply(op, tuple(args))


def iter_nodes(e: Expr) -> Iterator[Expr]:
    """Pre-order traversal, children left to right."""
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Apply):
            stack.extend(reversed(node.args))


def node_count(e: Expr) -> int:
    return sum(1 for _ in iter_nodes(e))


def depth(e: Expr) -> int:
    if isinstance(e, Apply):
        return 1 + max(depth(a) for a in e.args)
    return 1


def max_variable(e: Expr) -> int:
    return max((n.index for n in iter_nodes(e) if isinstance(n, Var)), default=0)


def count_placeholders(e: Expr) -> int:
    return sum(1 for n in iter_nodes(e) if isinstance(n, Placeholder))


def constants(e: Expr) -> list[float]:
    return [n.value for n in iter_nodes(e) if isinstance(n, Const)]


def collapse_id(e: Expr) -> Expr:
    if isinstance(e, Apply):
        if e.op == "id":
            return collapse_id(e.args[0])
        return Apply(e.op, tuple(collapse_id(a) for a in e.args))
    return e


def skeletonize(e: Expr) -> Expr:
    if isinstance(e, Const):
        return Placeholder()
    if isinstance(e, Apply):
        return Apply(e.op, tuple(skeletonize(a) for a in e.args))
    return e


def substitute(e: Expr, values: Sequence[float]) -> Expr:
    """Fill placeholders, in pre-order, with ``values``."""
    it = iter(values)

    def go(node):
        if isinstance(node, Placeholder):
            try:
                return Const(float(next(it)))
            except StopIteration:
                raise ValueError("not enough values for placeholders") from None
        if isinstance(node, Apply):
            return Apply(node.op, tuple(go(a) for a in node.args))
        return node

    out = go(e)
    if next(it, None) is not None:
        raise ValueError("more values than placeholders")
    return out


def round_constants(e: Expr, sig: int = 4) -> Expr:
    """Round every constant to ``sig`` significant digits."""
    if isinstance(e, Const):
        return Const(float(f"{e.value:.{sig}g}"))
    if isinstance(e, Apply):
        return Apply(e.op, tuple(round_constants(a, sig) for a in e.args))
    return e


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _pow(a, b):
    out = np.power(a, b)
    # nan**0 == 1 in IEEE; an invalid base must stay invalid
    return np.where(np.isnan(a) | np.isnan(b), np.nan, out)


_UNARY_FN = {
    "id": lambda a: a,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "exp": np.exp,
    "log": np.log,
}
_BINARY_FN = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "pow": _pow,
}


def evaluate_batch(e: Expr, X: np.ndarray, consts: Sequence[float] | None = None) -> np.ndarray:
    """Evaluate ``e`` on every row of ``X``.

    Rows where any subexpression is undefined or non-finite come back as NaN.
    ``consts`` fills placeholders in pre-order.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    pos = 0

    def go(node):
        nonlocal pos
        if isinstance(node, Var):
            if node.index > X.shape[1]:
                raise IndexError(f"x{node.index} requested but only {X.shape[1]} variables given")
            return X[:, node.index - 1]
        if isinstance(node, Const):
            return np.full(n, node.value)
        if isinstance(node, Placeholder):
            if consts is None or pos >= len(consts):
                raise ValueError("placeholder without a value")
            v = consts[pos]
            pos += 1
            return np.full(n, float(v))
        if len(node.args) == 1:
            out = _UNARY_FN[node.op](go(node.args[0]))
        else:
            a = go(node.args[0])
            out = _BINARY_FN[node.op](a, go(node.args[1]))
        if not np.isfinite(out).all():
            out = np.where(np.isfinite(out), out, np.nan)
        return out

    with np.errstate(all="ignore"):
        return go(e)


def compile_expr(e: Expr):
    """Return ``f(X, consts) -> ndarray`` equivalent to :func:`evaluate_batch`.

    Builds nested closures once so repeated evaluation (constant fitting, GP
    fitness) skips the tree dispatch. ``X`` must be 2-D.
    """
    counter = [0]

    def build(node):
        if isinstance(node, Var):
            j = node.index - 1
            return lambda X, c: X[:, j]
        if isinstance(node, Const):
            v = node.value
            return lambda X, c: np.full(X.shape[0], v)
        if isinstance(node, Placeholder):
            k = counter[0]
            counter[0] += 1
            return lambda X, c: np.full(X.shape[0], float(c[k]))
        if len(node.args) == 1:
            fn, a = _UNARY_FN[node.op], build(node.args[0])

            def run(X, c):
                out = fn(a(X, c))
                return out if np.isfinite(out).all() else np.where(np.isfinite(out), out, np.nan)
        else:
            fn, a, b = _BINARY_FN[node.op], build(node.args[0]), build(node.args[1])

            def run(X, c):
                out = fn(a(X, c), b(X, c))
                return out if np.isfinite(out).all() else np.where(np.isfinite(out), out, np.nan)
        return run

    body = build(e)
    needed = counter[0]
    width = max_variable(e)

    def f(X, consts=()):
        if X.shape[1] < width:
            raise IndexError(f"x{width} requested but only {X.shape[1]} variables given")
        if len(consts) < needed:
            raise ValueError("placeholder without a value")
        with np.errstate(all="ignore"):
            return body(X, consts)

    return f


def evaluate(e: Expr, x: Sequence[float], consts: Sequence[float] | None = None) -> float:
    """Value of ``e`` at a single point; raises :class:`DomainError` if undefined."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if max_variable(e) > x.shape[1]:
        raise ValueError(f"expression uses x{max_variable(e)} but point has length {x.shape[1]}")
    val = float(evaluate_batch(e, x, consts)[0])
    if not np.isfinite(val):
        raise DomainError(f"{to_infix_string(e)} is undefined at {x[0].tolist()}")
    return val


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

def format_constant(value: float, sig: int | None = None) -> str:
    if sig is None:
        return repr(float(value))
    return f"{value:.{sig}g}"


def to_infix_string(e: Expr, sig: int | None = None) -> str:
    """Canonical text form. ``sig`` limits constants to that many significant digits."""
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Const):
        return format_constant(e.value, sig)
    if isinstance(e, Placeholder):
        return PLACEHOLDER
    if e.op == "id":
        return to_infix_string(e.args[0], sig)
    if len(e.args) == 1:
        return f"{e.op}({to_infix_string(e.args[0], sig)})"
    left, right = (to_infix_string(a, sig) for a in e.args)
    return f"({left}{SYMBOLS[e.op]}{right})"


def skeleton_string(e: Expr) -> str:
    return to_infix_string(skeletonize(e))


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_NUMBER = re.compile(r"-?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_NAME = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_VARIABLE = re.compile(r"x([1-9]\d*)")
_FUNCTIONS = frozenset(UNARY)


def _tokenize(s: str) -> list[tuple[str, str, int]]:
    tokens: list[tuple[str, str, int]] = []
    i = 0
    while i < len(s):
        ch = s[i]
        if ch.isspace():
            i += 1
            continue
        # a minus directly after an operator, '(' or at the start belongs to a literal
        prev = tokens[-1][0] if tokens else None
        literal_ok = prev in (None, "op", "(")
        m = _NUMBER.match(s, i)
        if m and (ch != "-" or literal_ok):
            tokens.append(("num", m.group(), i))
            i = m.end()
            continue
        if s.startswith("**", i):
            tokens.append(("op", "^", i))
            i += 2
            continue
        if ch in "+-*/^":
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch in "()":
            tokens.append((ch, ch, i))
            i += 1
            continue
        m = _NAME.match(s, i)
        if m:
            name = m.group()
            if name == PLACEHOLDER:
                tokens.append(("const", name, i))
            elif _VARIABLE.fullmatch(name):
                tokens.append(("var", name, i))
            elif name in _FUNCTIONS:
                tokens.append(("func", name, i))
            else:
                raise ParseError(f"unknown name {name!r}", i)
            i = m.end()
            continue
        raise ParseError(f"unexpected character {ch!r}", i)
    return tokens


class _Parser:
    def __init__(self, s: str):
        self.s = s
        self.tokens = _tokenize(s)
        self.i = 0

    def peek(self):
        if self.i < len(self.tokens):
            return self.tokens[self.i]
        return ("eof", "", len(self.s))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, kind):
        tok = self.take()
        if tok[0] != kind:
            what = "end of input" if tok[0] == "eof" else repr(tok[1])
            raise ParseError(f"expected {kind!r}, found {what}", tok[2])
        return tok

    def parse(self) -> Expr:
        e = self.sum()
        tok = self.peek()
        if tok[0] != "eof":
            raise ParseError(f"unexpected {tok[1]!r}", tok[2])
        return e

    def sum(self) -> Expr:
        e = self.product()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = _SYMBOL_TO_OP[self.take()[1]]
            e = Apply(op, (e, self.product()))
        return e

    def product(self) -> Expr:
        e = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = _SYMBOL_TO_OP[self.take()[1]]
            e = Apply(op, (e, self.unary()))
        return e

    def unary(self) -> Expr:
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            operand = self.unary()
            if isinstance(operand, Const):
                return Const(-operand.value)
            return Apply("mul", (Const(-1.0), operand))
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Apply("pow", (base, self.unary()))
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "var":
            return Var(int(text[1:]))
        if kind == "const":
            return Placeholder()
        if kind == "func":
            self.expect("(")
            arg = self.sum()
            self.expect(")")
            return arg if text == "id" else Apply(text, (arg,))
        if kind == "(":
            e = self.sum()
            self.expect(")")
            return e
        what = "end of input" if kind == "eof" else repr(text)
        raise ParseError(f"unexpected {what}", pos)


def parse(s: str) -> Expr:
    """Parse infix text into an expression tree; raises :class:`ParseError`."""
    return _Parser(s).parse()


# ---------------------------------------------------------------------------
# Character vocabulary
# ---------------------------------------------------------------------------

PAD, SOS, EOS = "<PAD>", "<SOS>", "<EOS>"
SPECIALS = (PAD, SOS, EOS)


def _default_chars() -> list[str]:
    chars = set("()+-*/^.0123456789eEx") | {PLACEHOLDER}
    for name in UNARY:
        if name != "id":
            chars.update(name)
    return sorted(chars)


class Vocabulary:
    """Bijective map between characters (plus special tokens) and integer ids."""

    def __init__(self, chars: Sequence[str] | None = None):
        chars = list(_default_chars() if chars is None else chars)
        if len(set(chars)) != len(chars):
            raise ValueError("duplicate characters in vocabulary")
        self.tokens: list[str] = list(SPECIALS) + chars
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        self.id_to_token = dict(enumerate(self.tokens))

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def sos_id(self) -> int:
        return self.token_to_id[SOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def chars(self) -> list[str]:
        return self.tokens[len(SPECIALS):]

    def encode(self, s: str) -> list[int]:
        ids = [self.sos_id]
        for pos, ch in enumerate(s):
            if ch in SPECIALS or ch not in self.token_to_id:
                raise UnknownToken(f"character {ch!r} at position {pos} not in vocabulary")
            ids.append(self.token_to_id[ch])
        ids.append(self.eos_id)
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        """Inverse of :meth:`encode`; stops at the first end token."""
        out = []
        for i in ids:
            tok = self.id_to_token[int(i)]
            if tok == EOS:
                break
            if tok in SPECIALS:
                continue
            out.append(tok)
        return "".join(out)


def encode_tokens(s: str, vocab: Vocabulary) -> list[int]:
    return vocab.encode(s)


def decode_tokens(ids: Sequence[int], vocab: Vocabulary) -> str:
    return vocab.decode(ids)
