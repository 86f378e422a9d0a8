"""Minimal reverse-mode differentiation over numpy arrays.

Graphs are dynamic: every op call records a Node holding its forward value, its parents
and a closure mapping the output gradient to parent gradients. `backward` walks the
graph in reverse topological order from a scalar root. Row-indexed ops (embedding
lookups, affine maps restricted to a row subset) hand sparse row gradients to their
table parent so that large vocabulary matrices are never densified per step.
"""

import os
import threading
from collections.abc import Callable, Iterator, Mapping, Sequence
from contextlib import contextmanager
from typing import Any

import numpy as np
from scipy.special import entr, expit, logsumexp

from .errors import DataError, GraphError, NumericalError, ShapeError

Tensor = np.ndarray
DTYPE = np.float64

DEBUG = os.environ.get("SENGEN_DEBUG", "") not in ("", "0")

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate ops without recording a graph (per thread)."""
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class SparseRows:
    """Row-wise gradient contributions to a table, densified on demand."""

    __slots__ = ("shape", "rows", "values")

    def __init__(self, shape: tuple[int, ...], rows: np.ndarray, values: np.ndarray):
        self.shape = shape
        self.rows = [np.asarray(rows, dtype=np.intp)]
        self.values = [values]

    def extend(self, other: "SparseRows") -> "SparseRows":
        self.rows.extend(other.rows)
        self.values.extend(other.values)
        return self

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.shape, dtype=DTYPE)
        np.add.at(dense, np.concatenate(self.rows), np.concatenate(self.values))
        return dense


def _accumulate(old: Any, new: Any) -> Any:
    if old is None:
        return new
    if isinstance(old, SparseRows) and isinstance(new, SparseRows):
        return old.extend(new)
    if isinstance(old, SparseRows):
        old = old.to_dense()
    if isinstance(new, SparseRows):
        new = new.to_dense()
    return old + new


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "_grad", "op", "parents", "requires_grad", "_backward", "_consumed")

    def __init__(
        self,
        value: np.ndarray,
        op: str = "const",
        parents: tuple["Node", ...] = (),
        backward_fn: Callable[[np.ndarray], tuple[Any, ...]] | None = None,
        requires_grad: bool = False,
    ):
        self.value = value
        self._grad: Any = None
        self.op = op
        self.parents = parents
        self.requires_grad = requires_grad
        self._backward = backward_fn
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray | None:
        if isinstance(self._grad, SparseRows):
            self._grad = self._grad.to_dense()
        return self._grad

    def __float__(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"cannot convert a node of shape {self.value.shape} to float")
        return float(self.value.reshape(()))

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.value.shape})"


class Parameter(Node):
    """A trainable leaf. Gradients accumulate across backward calls until zero_grad."""

    __slots__ = ("name",)

    def __init__(self, value: np.ndarray, name: str = ""):
        super().__init__(np.asarray(value, dtype=DTYPE), op="param", requires_grad=True)
        self.name = name

    def zero_grad(self) -> None:
        self._grad = None

    def dense_grad(self) -> np.ndarray:
        grad = self.grad
        return np.zeros_like(self.value) if grad is None else grad


def constant(value: Any) -> Node:
    return Node(np.asarray(value, dtype=DTYPE))


def as_node(x: Any) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _make(value: np.ndarray, op: str, parents: tuple[Node, ...], backward_fn: Callable) -> Node:
    if DEBUG and not np.all(np.isfinite(value)):
        raise NumericalError(f"{op} produced non-finite values")
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Node(value, op, parents, backward_fn, requires_grad=True)
    return Node(value, op)


def _same_shape(op: str, a: Node, b: Node) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


def affine(W: Node, x: Node, b: Node | None = None, rows: np.ndarray | None = None) -> Node:
    """W·x + b, optionally restricted to the given output rows of W and b."""
    if W.value.ndim != 2 or x.value.ndim != 1 or W.shape[1] != x.shape[0]:
        raise ShapeError(f"affine: W{W.shape} cannot multiply x{x.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ShapeError(f"affine: bias{b.shape} does not match W{W.shape}")

    W_used = W.value if rows is None else W.value[rows]
    out = W_used @ x.value
    if b is not None:
        out = out + (b.value if rows is None else b.value[rows])

    def backward_fn(g: np.ndarray) -> tuple[Any, ...]:
        if rows is None:
            grads: list[Any] = [np.outer(g, x.value), W_used.T @ g]
            if b is not None:
                grads.append(g)
        else:
            grads = [SparseRows(W.shape, rows, np.outer(g, x.value)), W_used.T @ g]
            if b is not None:
                grads.append(SparseRows(b.shape, rows, g))
        return tuple(grads)

    parents = (W, x) if b is None else (W, x, b)
    return _make(out, "affine", parents, backward_fn)


def add(*xs: Node) -> Node:
    for x in xs[1:]:
        _same_shape("add", xs[0], x)
    out = xs[0].value
    for x in xs[1:]:
        out = out + x.value
    return _make(out, "add", xs, lambda g: (g,) * len(xs))


def sub(a: Node, b: Node) -> Node:
    _same_shape("sub", a, b)
    return _make(a.value - b.value, "sub", (a, b), lambda g: (g, -g))


def neg(a: Node) -> Node:
    return _make(-a.value, "neg", (a,), lambda g: (-g,))


def scale(a: Node, c: float) -> Node:
    return _make(a.value * c, "scale", (a,), lambda g: (g * c,))


def hadamard(a: Node, b: Node) -> Node:
    _same_shape("hadamard", a, b)
    return _make(a.value * b.value, "hadamard", (a, b), lambda g: (g * b.value, g * a.value))


def dot(a: Node, b: Node) -> Node:
    _same_shape("dot", a, b)
    return _make(np.dot(a.value, b.value), "dot", (a, b), lambda g: (g * b.value, g * a.value))


def sum_elems(a: Node) -> Node:
    return _make(np.sum(a.value), "sum", (a,), lambda g: (np.full(a.shape, g),))


def tanh_elem(a: Node) -> Node:
    out = np.tanh(a.value)
    return _make(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid_elem(a: Node) -> Node:
    out = expit(a.value)
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def exp_elem(a: Node) -> Node:
    out = np.exp(a.value)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def log_elem(a: Node) -> Node:
    if np.any(a.value <= 0):
        raise NumericalError("log of a non-positive value")
    return _make(np.log(a.value), "log", (a,), lambda g: (g / a.value,))


def clamp(a: Node, lo: float, hi: float) -> Node:
    inside = (a.value > lo) & (a.value < hi)
    return _make(np.clip(a.value, lo, hi), "clamp", (a,), lambda g: (g * inside,))


def log_softmax(x: Node, subset: np.ndarray | None = None) -> Node:
    """Log-softmax over all of x, or over x[subset] (output aligned with subset order)."""
    if x.value.ndim != 1:
        raise ShapeError(f"log_softmax expects a vector, got shape {x.shape}")
    if subset is not None and len(subset) == 0:
        raise DataError("log_softmax over an empty subset")

    logits = x.value if subset is None else x.value[subset]
    out = logits - logsumexp(logits)

    def backward_fn(g: np.ndarray) -> tuple[np.ndarray]:
        local = g - np.exp(out) * np.sum(g)
        if subset is None:
            return (local,)
        full = np.zeros(x.shape, dtype=DTYPE)
        np.add.at(full, subset, local)
        return (full,)

    return _make(out, "log_softmax", (x,), backward_fn)


def embedding_lookup(table: Node, index: int) -> Node:
    if not 0 <= index < table.shape[0]:
        raise DataError(f"embedding index {index} out of range for table of {table.shape[0]} rows")
    return _make(
        table.value[index],
        "embedding",
        (table,),
        lambda g: (SparseRows(table.shape, np.array([index]), g[None, :]),),
    )


def embedding_sum(table: Node, indices: Sequence[int]) -> Node:
    """Σ table[i] over indices (bag of rows)."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size == 0:
        raise DataError("embedding_sum over no indices")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise DataError(f"embedding index out of range for table of {table.shape[0]} rows")
    return _make(
        table.value[idx].sum(axis=0),
        "embedding_sum",
        (table,),
        lambda g: (SparseRows(table.shape, idx, np.broadcast_to(g, (idx.size, table.shape[1]))),),
    )


def pick(x: Node, index: int) -> Node:
    """Scalar element x[index] of a vector."""

    def backward_fn(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(x.shape, dtype=DTYPE)
        full[index] = g
        return (full,)

    return _make(x.value[index], "pick", (x,), backward_fn)


def stack(scalars: Sequence[Node]) -> Node:
    """Vector made of scalar nodes."""
    out = np.array([float(s) for s in scalars], dtype=DTYPE)
    return _make(out, "stack", tuple(scalars), lambda g: tuple(g[i] for i in range(len(scalars))))


def entropy_sum(q: Node) -> Node:
    """Σ −q log q with 0·log 0 = 0."""
    positive = q.value > 0
    safe_log = np.log(np.where(positive, q.value, 1.0))
    return _make(
        np.sum(entr(q.value)),
        "entropy",
        (q,),
        lambda g: (-g * np.where(positive, safe_log + 1.0, 0.0),),
    )


def _topological_order(root: Node) -> list[Node]:
    order: list[Node] = []
    visited: set[int] = set()
    on_path: set[int] = set()
    stack_: list[tuple[Node, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            on_path.discard(id(node))
            order.append(node)
            continue
        if id(node) in visited:
            if DEBUG and id(node) in on_path:
                raise GraphError("cycle detected in computation graph")
            continue
        visited.add(id(node))
        on_path.add(id(node))
        stack_.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack_.append((parent, False))
    return order


def backward(root: Node) -> dict[Node, np.ndarray]:
    """Accumulate ∂root/∂leaf into every reachable leaf that requires a gradient.

    Returns:
        Mapping of each reached leaf to its (dense) accumulated gradient

    Raises:
        GraphError: If root is not scalar or its graph was already differentiated
    """
    if root.value.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {root.value.shape}")
    if root._consumed:
        raise GraphError("backward already ran on this graph; rebuild it before differentiating again")
    root._consumed = True
    if not root.requires_grad:
        return {}

    order = _topological_order(root)
    # interior nodes may be shared with an earlier root; only leaves accumulate across calls
    for node in order:
        if node._backward is not None:
            node._grad = None
    root._grad = np.ones_like(root.value)
    leaves: dict[Node, np.ndarray] = {}
    for node in reversed(order):
        if node._backward is None:
            leaves[node] = node.grad
            continue
        g = node.grad
        if g is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if parent.requires_grad and pg is not None:
                parent._grad = _accumulate(parent._grad, pg)
    return {leaf: leaf.grad for leaf in leaves}


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise |a − n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def check_gradients(
    f: Callable[[], Node], params: Mapping[str, Parameter], h: float = 1e-5, floor: float = 1e-8
) -> dict[str, float]:
    """Compare backward() against central finite differences for every parameter entry.

    Args:
        f: Rebuilds the scalar graph from the current parameter values
        params: Parameters to check, by name
        h: Finite-difference step
        floor: Relative-error denominator floor

    Returns:
        Max relative error per parameter name
    """
    for p in params.values():
        p.zero_grad()
    backward(f())
    analytic = {name: p.dense_grad().copy() for name, p in params.items()}

    errors = {}
    with no_grad():
        for name, p in params.items():
            numeric = np.zeros_like(p.value)
            for idx in np.ndindex(p.value.shape):
                original = p.value[idx]
                p.value[idx] = original + h
                f_plus = float(f())
                p.value[idx] = original - h
                f_minus = float(f())
                p.value[idx] = original
                numeric[idx] = (f_plus - f_minus) / (2 * h)
            errors[name] = float(np.max(relative_error(analytic[name], numeric, floor), initial=0.0))
    for p in params.values():
        p.zero_grad()
    return errors
