import numpy as np
import pytest

from conjloglin.graphs import UndirectedGraph
from conjloglin.model import Model, VariableSpace


def graph(vertices, edges):
    return UndirectedGraph.from_edges(tuple(vertices), [tuple(e) for e in edges])


def binary_graphical(vertices, edges):
    return Model.graphical(VariableSpace.binary(vertices), graph(vertices, edges))


def four_cycle():
    return binary_graphical("abcd", ["ab", "bc", "cd", "da"])


def chain():
    return binary_graphical("abc", ["ab", "bc"])


def chain_322():
    space = VariableSpace(("a", "b", "c"), (3, 2, 2))
    return Model.graphical(space, graph("abc", ["ab", "bc"]))


def saturated_2x2():
    return Model.saturated(VariableSpace.binary("ab"))


def no_three_way():
    return Model.from_family(VariableSpace.binary("abc"), [("a", "b"), ("b", "c"), ("a", "c")])


def cycle_pendant():
    return binary_graphical("abcde", ["ab", "bc", "cd", "da", "de"])


def spina_bifida():
    """Cliques {a} and {bc}: a independent of the pair (b, c)."""
    return binary_graphical("abc", ["bc"])


def numeric_jacobian(fn, x, h=1e-4):
    """Five-point central differences of a vector map, one column per coordinate."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((-fn(x + 2 * e) + 8 * fn(x + e) - 8 * fn(x - e) + fn(x - 2 * e)) / (12 * h))
    return np.column_stack(cols)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
