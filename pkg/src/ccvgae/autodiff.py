"""Dense-matrix reverse-mode autodiff and the Adam optimizer.

Every value is a 2-D ``float64`` numpy array.  A :class:`Tape` records
operations in creation order; because a node can only be built from nodes
that already exist, parent ids are always smaller than the child id and a
reverse sweep over the tape is a valid topological order.

Example
-------
>>> tape = Tape()
>>> x = tape.leaf(np.array([[1.0, 2.0]]))
>>> loss = total(square(x))
>>> tape.backward(loss)
>>> x.grad
array([[2., 4.]])
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

SINGULAR_RTOL = 1e-12


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An operand lies outside the domain of the operation."""


class SingularMatrixError(ArithmeticError):
    """LU factorization met a pivot below tolerance."""


class NumericError(FloatingPointError):
    """A non-finite value appeared on the tape."""


def as_matrix(value) -> np.ndarray:
    """Coerce to a 2-D float64 array (scalars become 1x1)."""
    m = np.asarray(value, dtype=np.float64)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(1, -1)
    elif m.ndim != 2:
        raise DimensionError(f"expected a matrix, got ndim={m.ndim}")
    return m


@dataclass(eq=False)
class Node:
    tape: "Tape"
    id: int
    value: np.ndarray
    parents: list[tuple[int, str]] = field(default_factory=list)
    requires_grad: bool = True
    _backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
    _grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    def item(self) -> float:
        return float(self.value[0, 0])

    # operator sugar; constants are lifted onto the same tape
    def __add__(self, other):
        return add(self, _lift(self, other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(self, other))

    def __rsub__(self, other):
        return sub(_lift(self, other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return hadamard(self, _lift(self, other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(self, other, broadcast=False))

    @property
    def T(self):
        return transpose(self)


def _lift(like: Node, x, broadcast: bool = True) -> Node:
    if isinstance(x, Node):
        if x.tape is not like.tape:
            raise ValueError("operands live on different tapes")
        return x
    if broadcast and np.isscalar(x):
        return like.tape.const(np.full(like.shape, float(x)))
    return like.tape.const(as_matrix(x))


class Tape:
    """Single-owner record of operations."""

    def __init__(self, check_finite: bool = True):
        self.nodes: list[Node] = []
        self.check_finite = check_finite

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, requires_grad: bool = True) -> Node:
        return self._push(as_matrix(value).copy(), [], None, requires_grad)

    def const(self, value) -> Node:
        return self._push(as_matrix(value), [], None, False)

    def _push(self, value, parents, backward, requires_grad=True) -> Node:
        if self.check_finite and not np.all(np.isfinite(value)):
            tag = parents[0][1] if parents else "leaf"
            raise NumericError(f"non-finite value produced by '{tag}' (node {len(self.nodes)})")
        node = Node(self, len(self.nodes), value, parents, requires_grad, backward)
        self.nodes.append(node)
        return node

    def record(self, tag: str, value, inputs: Sequence[Node], backward) -> Node:
        for x in inputs:
            if x.tape is not self:
                raise ValueError("operands live on different tapes")
        needs = any(x.requires_grad for x in inputs)
        return self._push(as_matrix(value), [(x.id, tag) for x in inputs],
                          backward if needs else None, needs)

    def zero_grad(self):
        for node in self.nodes:
            node._grad = None

    def backward(self, loss: Node):
        if loss.shape != (1, 1):
            raise DimensionError(f"backward needs a 1x1 loss, got {loss.shape}")
        self.zero_grad()
        loss._grad = np.ones((1, 1))
        for node in reversed(self.nodes[: loss.id + 1]):
            if node._backward is None or node._grad is None:
                continue
            grads = node._backward(node._grad)
            for (pid, _), g in zip(node.parents, grads):
                parent = self.nodes[pid]
                if g is None or not parent.requires_grad:
                    continue
                if parent._grad is None:
                    parent._grad = np.array(g, dtype=np.float64, copy=True)
                else:
                    parent._grad += g


def _same_shape(a: Node, b: Node, op: str):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Node, b: Node) -> Node:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return a.tape.record("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a: Node, b: Node) -> Node:
    _same_shape(a, b, "add")
    return a.tape.record("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    _same_shape(a, b, "sub")
    return a.tape.record("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def hadamard(a: Node, b: Node) -> Node:
    _same_shape(a, b, "hadamard")
    av, bv = a.value, b.value
    return a.tape.record("hadamard", av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return a.tape.record("scale", c * a.value, (a,), lambda g: (c * g,))


def sigmoid(a: Node) -> Node:
    s = _sigmoid(a.value)
    return a.tape.record("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def log_sigmoid(a: Node) -> Node:
    """``log(sigmoid(x))`` without underflow for very negative ``x``."""
    x = a.value
    out = -np.logaddexp(0.0, -x)
    return a.tape.record("log_sigmoid", out, (a,), lambda g: (g * _sigmoid(-x),))


def relu(a: Node) -> Node:
    mask = (a.value > 0).astype(np.float64)
    return a.tape.record("relu", a.value * mask, (a,), lambda g: (g * mask,))


def elu(a: Node) -> Node:
    x = a.value
    neg = np.expm1(np.minimum(x, 0.0))
    out = np.where(x >= 0, x, neg)
    slope = np.where(x >= 0, 1.0, neg + 1.0)
    return a.tape.record("elu", out, (a,), lambda g: (g * slope,))


def exp(a: Node) -> Node:
    with np.errstate(over="ignore"):
        e = np.exp(a.value)  # overflow surfaces as NumericError on push
    return a.tape.record("exp", e, (a,), lambda g: (g * e,))


def log(a: Node) -> Node:
    x = a.value
    if np.any(x <= 0):
        raise DomainError("log of a non-positive entry")
    return a.tape.record("log", np.log(x), (a,), lambda g: (g / x,))


def square(a: Node) -> Node:
    x = a.value
    return a.tape.record("square", x * x, (a,), lambda g: (2.0 * g * x,))


def absolute(a: Node) -> Node:
    x = a.value
    return a.tape.record("abs", np.abs(x), (a,), lambda g: (g * np.sign(x),))


def clip(a: Node, lo: float, hi: float) -> Node:
    x = a.value
    inside = ((x >= lo) & (x <= hi)).astype(np.float64)
    return a.tape.record("clip", np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


ELEMENTWISE = {
    "add": add, "sub": sub, "hadamard": hadamard, "scale": scale,
    "sigmoid": sigmoid, "relu": relu, "elu": elu, "exp": exp,
    "log": log, "square": square,
}


def elementwise(op: str, *args) -> Node:
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(ELEMENTWISE)}")
    return fn(*args)


def transpose(a: Node) -> Node:
    return a.tape.record("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))


def total(a: Node) -> Node:
    """Sum of all entries as a 1x1 node."""
    shape = a.shape
    return a.tape.record("sum", a.value.sum(), (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean(a: Node) -> Node:
    return scale(total(a), 1.0 / a.value.size)


def trace(a: Node) -> Node:
    n = _square_dim(a, "trace")
    return a.tape.record("trace", np.trace(a.value), (a,), lambda g: (g[0, 0] * np.eye(n),))


def mean_rows(a: Node) -> Node:
    """Column means, 1 x cols."""
    n = a.shape[0]
    return a.tape.record("mean_rows", a.value.mean(axis=0, keepdims=True), (a,),
                         lambda g: (np.repeat(g / n, n, axis=0),))


def broadcast_rows(a: Node, n: int) -> Node:
    """Tile a 1 x c row into n x c."""
    if a.shape[0] != 1:
        raise DimensionError(f"broadcast_rows needs a single row, got {a.shape}")
    return a.tape.record("broadcast_rows", np.repeat(a.value, n, axis=0), (a,),
                         lambda g: (g.sum(axis=0, keepdims=True),))


def _square_dim(a: Node, op: str) -> int:
    r, c = a.shape
    if r != c:
        raise DimensionError(f"{op}: matrix must be square, got {a.shape}")
    return r


def lu_inverse(m: np.ndarray) -> np.ndarray:
    """Inverse by LU with partial pivoting; raises on a tiny pivot."""
    n = m.shape[0]
    with warnings.catch_warnings():
        # an exactly-zero pivot is reported below as SingularMatrixError
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(m, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if n and pivots.min() <= SINGULAR_RTOL * max(pivots.max(), np.finfo(float).tiny):
        raise SingularMatrixError(
            f"pivot {pivots.min():.3e} below {SINGULAR_RTOL:g} x max pivot {pivots.max():.3e}")
    return scipy.linalg.lu_solve((lu, piv), np.eye(n))


def inverse(m: Node) -> Node:
    _square_dim(m, "inverse")
    inv = lu_inverse(m.value)

    def back(g):
        return (-inv.T @ g @ inv.T,)

    return m.tape.record("inverse", inv, (m,), back)


def matrix_power_trace(m: Node, k: int) -> Node:
    """tr(M^k) built from repeated products so gradients flow through the tape."""
    n = _square_dim(m, "matrix_power_trace")
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return m.tape.const(float(n))
    p = m
    for _ in range(k - 1):
        p = matmul(p, m)
    return trace(p)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], **kw)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
    """Bias-corrected Adam update, applied in place to ``params``."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise DimensionError("adam_step: parameter/gradient/state count mismatch")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"adam_step: shape mismatch {p.shape}, {g.shape}, {m.shape}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to keep exp() from overflowing
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
