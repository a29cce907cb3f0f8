"""Reverse-mode gradients over a small fixed primitive set.

Supported primitives: matrix multiply, (broadcast) add, elementwise tanh
and SiLU, mean, squared error, concatenation, and scaling by a Python
float. Adding a primitive requires adding its adjoint here plus a
finite-difference test. Every forward result is checked for finiteness;
a non-finite intermediate raises ``NumericalInstabilityError`` naming the
primitive that produced it.

Each call to :func:`value_and_grad` builds a private graph, so independent
calls may run concurrently; nothing here mutates shared state.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericalInstabilityError
from .tensor import ParamSet, Tensor

Computation = Callable[[dict[str, "Node"]], "Node"]


class Node:
    """One value in an evaluation graph."""

    __slots__ = ("value", "parents", "backward", "op", "needs_grad")

    def __init__(self, value, parents=(), backward=None, op="leaf", needs_grad=False):
        self.value = value
        self.parents = parents
        self.backward = backward
        self.op = op
        self.needs_grad = needs_grad or any(p.needs_grad for p in parents)

    # Light sugar; everything routes through the named primitives.
    def __add__(self, other: "Node") -> "Node":
        return add(self, other)

    def __sub__(self, other: "Node") -> "Node":
        return add(self, scale(other, -1.0))

    def __mul__(self, c: float) -> "Node":
        return scale(self, c)

    __rmul__ = __mul__


def _finish(value: np.ndarray, op: str, parents, backward) -> Node:
    if not np.all(np.isfinite(value)):
        raise NumericalInstabilityError(f"primitive {op!r} produced non-finite values")
    return Node(value, parents, backward, op)


def constant(value) -> Node:
    """Graph input that does not require gradients."""
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericalInstabilityError("primitive 'constant' produced non-finite values")
    return Node(arr, op="constant")


def leaf(value) -> Node:
    """Differentiable graph input (a parameter)."""
    node = constant(value)
    node.op = "leaf"
    node.needs_grad = True
    return node


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Node, b: Node) -> Node:
    value = a.value + b.value

    def backward(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return _finish(value, "add", (a, b), backward)


def scale(a: Node, c: float) -> Node:
    c = float(c)
    value = a.value * c

    def backward(g):
        return (g * c,)

    return _finish(value, "scale", (a,), backward)


def matmul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ValueError("matmul supports 1-D and 2-D operands only")
    value = av @ bv

    def backward(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g * bv, g * av  # 1-D dot

    return _finish(value, "matmul", (a, b), backward)


def tanh(a: Node) -> Node:
    value = np.tanh(a.value)

    def backward(g):
        return (g * (1.0 - value * value),)

    return _finish(value, "tanh", (a,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a: Node) -> Node:
    s = _sigmoid(a.value)
    value = a.value * s

    def backward(g):
        return (g * (s + a.value * s * (1.0 - s)),)

    return _finish(value, "silu", (a,), backward)


def mean(a: Node) -> Node:
    value = np.asarray(a.value.mean())
    n = a.value.size

    def backward(g):
        return (np.full_like(a.value, float(g) / n),)

    return _finish(value, "mean", (a,), backward)


def sq_err(a: Node, b: Node) -> Node:
    """Elementwise squared error (a - b)**2."""
    diff = a.value - b.value
    value = diff * diff

    def backward(g):
        d = 2.0 * g * diff
        return _unbroadcast(d, a.value.shape), _unbroadcast(-d, b.value.shape)

    return _finish(value, "sq_err", (a, b), backward)


def concat(parts: Sequence[Node], axis: int = -1) -> Node:
    values = [p.value for p in parts]
    value = np.concatenate(values, axis=axis)
    sizes = [v.shape[axis] for v in values]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _finish(value, "concat", tuple(parts), backward)


def _backprop(out: Node) -> dict[int, np.ndarray]:
    """Reverse accumulation from a scalar output; returns grads keyed by id(node)."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.needs_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(out): np.asarray(1.0)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.backward is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if not parent.needs_grad:
                continue
            if not np.all(np.isfinite(pg)):
                raise NumericalInstabilityError(
                    f"primitive {node.op!r} produced non-finite gradients"
                )
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return grads


def value_and_grad(computation: Computation, params: ParamSet) -> tuple[float, ParamSet]:
    """Evaluate ``computation`` at ``params`` and return (loss, gradients).

    ``computation`` receives a dict mapping each parameter name to a graph
    node and must return a scalar node built from the supported primitives.
    """
    leaves = {name: leaf(t.as_array()) for name, t in params.items()}
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = computation(leaves)
        if np.asarray(out.value).size != 1:
            raise ValueError("computation must return a scalar")
        grads = _backprop(out)
    grad_items = []
    for name, t in params.items():
        g = grads.get(id(leaves[name]))
        if g is None:
            g = np.zeros(t.shape)
        grad_items.append((name, Tensor(t.shape, np.broadcast_to(g, t.shape))))
    return float(out.value), ParamSet(grad_items)


def evaluate(computation: Computation, params: ParamSet) -> float:
    """Forward-only evaluation of a computation (no gradient pass)."""
    nodes = {name: constant(t.as_array()) for name, t in params.items()}
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = computation(nodes)
    if np.asarray(out.value).size != 1:
        raise ValueError("computation must return a scalar")
    return float(out.value)


def finite_difference(computation: Computation, params: ParamSet, h: float) -> ParamSet:
    """Central-difference gradient estimate, one probe per scalar coordinate.

    Independent of the reverse-mode path: only forward evaluations are used.
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    flat = params.flatten()
    est = finite_difference_at(computation, params, range(flat.size), h)
    return params.unflatten(est)


def finite_difference_at(
    computation: Computation,
    params: ParamSet,
    coords: Sequence[int],
    h: float,
) -> np.ndarray:
    """Central differences at selected flat coordinates only."""
    if h <= 0:
        raise ValueError("step size h must be positive")
    coords = list(coords)
    flat = params.flatten()
    out = np.zeros(len(coords))
    for k, i in enumerate(coords):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        f_plus = evaluate(computation, params.unflatten(bumped))
        bumped[i] = flat[i] - h
        f_minus = evaluate(computation, params.unflatten(bumped))
        out[k] = (f_plus - f_minus) / (2.0 * h)
    return out
