import numpy as np
import pytest
from hypothesis import strategies as st

from symgpt.eqgen import GenConfig, generate_instance, instance_rng, random_equation
from symgpt.expr import BINARY, UNARY, Apply, Const, Placeholder, Var


def exprs(max_var: int = 3, placeholders: bool = True):
    """Hypothesis strategy for arbitrary expression trees (no ``id`` nodes)."""
    leaves = [st.integers(1, max_var).map(Var),
              st.floats(-5, 5, allow_nan=False, allow_infinity=False).map(Const)]
    if placeholders:
        leaves.append(st.just(Placeholder()))
    unary = [u for u in UNARY if u != "id"]

    def extend(children):
        return st.one_of(
            st.tuples(st.sampled_from(unary), children).map(lambda t: Apply(t[0], (t[1],))),
            st.tuples(st.sampled_from(BINARY), children, children).map(lambda t: Apply(t[0], (t[1], t[2]))),
        )

    return st.recursive(st.one_of(*leaves), extend, max_leaves=12)


def generated_equations(count: int, d=(1, 3), seed: int = 0):
    cfg = GenConfig(d=d)
    return [random_equation(cfg, instance_rng(seed, i), d=int(instance_rng(seed, i, 1).integers(d[0], d[1] + 1)))
            for i in range(count)]


@pytest.fixture(scope="session")
def small_corpus():
    cfg = GenConfig(d=1, n_points=20)
    return [generate_instance(cfg, instance_rng(3, i)) for i in range(40)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, passed: bool, detail: str):
    ACCEPTANCE[criterion] = f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE[criterion])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
