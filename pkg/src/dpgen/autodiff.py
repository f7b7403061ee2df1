"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Node`` wraps a numpy array together with its accumulated gradient and the
local backward rule that produced it. Graphs are rebuilt per forward pass
(define-by-run); ``backward`` resets every reachable gradient before
propagating, so repeated calls never silently accumulate.

The op set is exactly what the encoder/decoder passes and the training losses
need: affine maps, pointwise nonlinearities, full reductions, and the pairwise
Euclidean distance matrix of row vectors.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .errors import DomainError, ShapeMismatchError

Array = np.ndarray


def _as_f64(data) -> Array:
    # np.ascontiguousarray would promote 0-d inputs to 1-d; keep scalar shapes
    arr = np.asarray(data, dtype=np.float64)
    return arr if arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(arr)


class Node:
    """One value in the differentiation graph."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents: tuple["Node", ...] = (), backward: Callable[[Array], None] | None = None):
        self.value = _as_f64(value)
        self.grad = np.zeros_like(self.value)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(shape={self.shape}, leaf={self._backward is None})"

    # Operator sugar; scalars and arrays are wrapped as constant leaves.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return subtract(self, _wrap(other))

    def __rsub__(self, other):
        return subtract(_wrap(other), self)

    def __mul__(self, other):
        return multiply(self, _wrap(other))

    def __rmul__(self, other):
        return multiply(_wrap(other), self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcasted gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_op(name: str, a: Node, b: Node, fwd, da, db) -> Node:
    try:
        value = fwd(a.value, b.value)
    except ValueError:
        raise ShapeMismatchError(name, a.shape, b.shape) from None

    def backward(g: Array) -> None:
        a.grad += _unbroadcast(da(g), a.shape)
        b.grad += _unbroadcast(db(g), b.shape)

    return Node(value, (a, b), backward)


def add(a: Node, b: Node) -> Node:
    return _broadcast_op("add", a, b, np.add, lambda g: g, lambda g: g)


def subtract(a: Node, b: Node) -> Node:
    return _broadcast_op("subtract", a, b, np.subtract, lambda g: g, lambda g: -g)


def multiply(a: Node, b: Node) -> Node:
    return _broadcast_op("multiply", a, b, np.multiply, lambda g: g * b.value, lambda g: g * a.value)


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    value = a.value @ b.value

    def backward(g: Array) -> None:
        a.grad += g @ b.value.T
        b.grad += a.value.T @ g

    return Node(value, (a, b), backward)


def negate(a: Node) -> Node:
    def backward(g: Array) -> None:
        a.grad -= g

    return Node(-a.value, (a,), backward)


def exp(a: Node) -> Node:
    value = np.exp(a.value)

    def backward(g: Array) -> None:
        a.grad += g * value

    return Node(value, (a,), backward)


def log(a: Node) -> Node:
    if np.any(a.value <= 0.0):
        raise DomainError("log of non-positive value")

    def backward(g: Array) -> None:
        a.grad += g / a.value

    return Node(np.log(a.value), (a,), backward)


def square(a: Node) -> Node:
    def backward(g: Array) -> None:
        a.grad += 2.0 * a.value * g

    return Node(a.value * a.value, (a,), backward)


def sqrt(a: Node) -> Node:
    if np.any(a.value < 0.0):
        raise DomainError("sqrt of negative value")
    value = np.sqrt(a.value)

    def backward(g: Array) -> None:
        # zero subgradient where the input is exactly 0
        a.grad += np.where(value > 0.0, g / (2.0 * np.maximum(value, 1e-300)), 0.0)

    return Node(value, (a,), backward)


def absolute(a: Node) -> Node:
    def backward(g: Array) -> None:
        a.grad += g * np.sign(a.value)

    return Node(np.abs(a.value), (a,), backward)


LEAKY_SLOPE = 0.01


def leaky_relu(a: Node, slope: float = LEAKY_SLOPE) -> Node:
    positive = a.value > 0.0

    def backward(g: Array) -> None:
        # slope applies on the whole x <= 0 branch, including x == 0
        a.grad += g * np.where(positive, 1.0, slope)

    return Node(np.where(positive, a.value, slope * a.value), (a,), backward)


def total_sum(a: Node) -> Node:
    def backward(g: Array) -> None:
        a.grad += g

    return Node(a.value.sum(), (a,), backward)


def mean(a: Node) -> Node:
    n = a.value.size
    if n == 0:
        raise DomainError("mean of an empty tensor")

    def backward(g: Array) -> None:
        a.grad += g / n

    return Node(a.value.mean(), (a,), backward)


def scale(a: Node, factor: float) -> Node:
    factor = float(factor)

    def backward(g: Array) -> None:
        a.grad += g * factor

    return Node(a.value * factor, (a,), backward)


def apply_mask(a: Node, mask: Array) -> Node:
    """Hadamard product with a constant matrix (no gradient into the mask)."""
    mask = _as_f64(mask)
    if mask.shape != a.shape:
        raise ShapeMismatchError("apply_mask", a.shape, mask.shape)

    def backward(g: Array) -> None:
        a.grad += g * mask

    return Node(a.value * mask, (a,), backward)


def columns(a: Node, start: int, stop: int) -> Node:
    """Column slice [start, stop) of a 2-D node."""
    if a.value.ndim != 2 or not (0 <= start <= stop <= a.shape[1]):
        raise ShapeMismatchError("columns", a.shape, (start, stop))

    def backward(g: Array) -> None:
        a.grad[:, start:stop] += g

    return Node(a.value[:, start:stop].copy(), (a,), backward)


def row_norms(a: Node) -> Node:
    """Euclidean norm of each row of a 2-D node; zero rows get zero gradient."""
    if a.value.ndim != 2:
        raise ShapeMismatchError("row_norms", a.shape, ("B", "n"))
    value = np.sqrt(np.sum(a.value * a.value, axis=1))

    def backward(g: Array) -> None:
        safe = np.where(value > 0.0, value, 1.0)
        a.grad += (g / safe)[:, None] * a.value * (value > 0.0)[:, None]

    return Node(value, (a,), backward)


def pairwise_dist(a: Node) -> Node:
    """B x B Euclidean distance matrix of the rows of a B x n node.

    The diagonal (and any exactly coincident rows) receives zero gradient;
    those entries are excluded by the i != j sums that consume this op.
    """
    if a.value.ndim != 2:
        raise ShapeMismatchError("pairwise_dist", a.shape, ("B", "n"))
    diff = a.value[:, None, :] - a.value[None, :, :]
    value = np.sqrt(np.sum(diff * diff, axis=2))

    def backward(g: Array) -> None:
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(value > 0.0, (g + g.T) / np.where(value > 0.0, value, 1.0), 0.0)
        a.grad += w.sum(axis=1)[:, None] * a.value - w @ a.value

    return Node(value, (a,), backward)


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> None:
    """Populate grads of every node reachable from a scalar loss.

    Gradients are reset at the start of each call, so leaves reachable from
    two separate losses never mix contributions across calls.
    """
    if loss.value.shape != ():
        raise ShapeMismatchError("backward", loss.shape, ())
    order = _topo_order(loss)
    for node in order:
        node.grad = np.zeros_like(node.value)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def finite_difference_check(
    f: Callable[[dict[str, Node]], Node],
    params: Mapping[str, Array],
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` rebuilds its graph from a dict of leaf nodes and returns a scalar
    node; it must be deterministic (freeze any sampling noise before calling).
    The error for each parameter entry is |analytic - cd| / max(1, |cd|).
    """
    if h <= 0.0:
        raise ValueError("step h must be positive")
    leaves = {k: Node(np.asarray(v, dtype=np.float64).copy()) for k, v in params.items()}
    loss = f(leaves)
    if not np.isfinite(loss.value):
        raise DomainError(f"objective returned non-finite value {loss.value!r}")
    backward(loss)

    def value_at(perturbed: Mapping[str, Array]) -> float:
        out = f({k: Node(v) for k, v in perturbed.items()}).value
        if not np.isfinite(out):
            raise DomainError(f"objective returned non-finite value {out!r}")
        return float(out)

    worst = 0.0
    base = {k: np.asarray(v, dtype=np.float64).copy() for k, v in params.items()}
    for name, arr in base.items():
        flat = arr.reshape(-1)
        analytic = leaves[name].grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = value_at(base)
            flat[i] = orig - h
            down = value_at(base)
            flat[i] = orig
            cd = (up - down) / (2.0 * h)
            err = abs(analytic[i] - cd) / max(1.0, abs(cd))
            worst = max(worst, err)
    return worst


def gradients(loss: Node, leaves: Mapping[str, Node]) -> dict[str, Array]:
    """Run backward and return a name -> gradient map over the given leaves."""
    backward(loss)
    return {name: node.grad.copy() for name, node in leaves.items()}
