import numpy as np
import pytest

from ccvgae import autodiff as ad
from ccvgae.graphio import GraphDataset

FD_STEP = 1e-5


def numeric_grad(fn, arrays, h=FD_STEP):
    """Central differences of the scalar ``fn(arrays)`` for every entry of every array."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            up = fn(arrays)
            a[idx] = old - h
            down = fn(arrays)
            a[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_grad(build, arrays, h=FD_STEP):
    """Worst relative error between tape gradients and finite differences.

    ``build(tape, nodes)`` returns a 1x1 loss node given leaf nodes for ``arrays``.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]

    def value(arrs):
        t = ad.Tape()
        return build(t, [t.const(a) for a in arrs]).item()

    tape = ad.Tape()
    leaves = [tape.leaf(a) for a in arrays]
    tape.backward(build(tape, leaves))
    numeric = numeric_grad(value, arrays, h)
    return max(rel_err(leaf.grad, n) for leaf, n in zip(leaves, numeric))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_graph():
    """6 nodes, 7 edges, 2 attributes."""
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)]
    attrs = np.random.default_rng(0).normal(size=(6, 2))
    return GraphDataset.from_edges(6, edges, attrs, name="toy")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
