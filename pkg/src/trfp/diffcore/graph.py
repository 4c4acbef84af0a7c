"""Tape-based reverse-mode differentiation over fixed-shape float64 arrays.

A ``Node`` wraps a numpy array and remembers how it was produced. Operations
accept either nodes or plain arrays/floats; plain operands are constants and
receive no adjoint. A fresh tape is built for every update step and discarded
after ``backward``.
"""

from __future__ import annotations

import numpy as np


class GraphError(Exception):
    """Misuse of the computation graph (shape mismatch, non-scalar root)."""


class Node:
    """One value in the computation graph: payload, adjoint, provenance."""

    __slots__ = ("value", "adjoint", "_parents", "_backward")

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.adjoint = None
        self._parents = parents
        self._backward = backward_fn

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def grad(self) -> np.ndarray:
        """Accumulated adjoint, zero-filled if the node was never reached."""
        if self.adjoint is None:
            return np.zeros_like(self.value)
        return self.adjoint

    def zero_grad(self):
        self.adjoint = None

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Node(shape={self.value.shape})"


def _accumulate(node: Node, g: np.ndarray):
    if node.adjoint is None:
        node.adjoint = np.zeros_like(node.value)
    node.adjoint += g


def _value(x) -> np.ndarray:
    if isinstance(x, Node):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _is_scalar_const(v: np.ndarray) -> bool:
    return v.ndim == 0


def _check_shapes(av: np.ndarray, bv: np.ndarray, op: str):
    if av.shape != bv.shape and not _is_scalar_const(av) and not _is_scalar_const(bv):
        raise GraphError(f"{op}: shape mismatch {av.shape} vs {bv.shape}")


def add(a, b) -> Node:
    av, bv = _value(a), _value(b)
    _check_shapes(av, bv, "add")
    out_val = av + bv
    parents = tuple(x for x in (a, b) if isinstance(x, Node))

    def backward_fn(g):
        if isinstance(a, Node):
            _accumulate(a, g if a.value.shape == g.shape else np.sum(g))
        if isinstance(b, Node):
            _accumulate(b, g if b.value.shape == g.shape else np.sum(g))

    return Node(out_val, parents, backward_fn)


def sub(a, b) -> Node:
    return add(a, neg(b) if isinstance(b, Node) else -_value(b))


def neg(a) -> Node:
    if not isinstance(a, Node):
        return Node(-_value(a))
    out_val = -a.value

    def backward_fn(g):
        _accumulate(a, -g)

    return Node(out_val, (a,), backward_fn)


def mul(a, b) -> Node:
    av, bv = _value(a), _value(b)
    _check_shapes(av, bv, "mul")
    out_val = av * bv
    parents = tuple(x for x in (a, b) if isinstance(x, Node))

    def backward_fn(g):
        if isinstance(a, Node):
            ga = g * bv
            _accumulate(a, ga if a.value.shape == ga.shape else np.sum(ga))
        if isinstance(b, Node):
            gb = g * av
            _accumulate(b, gb if b.value.shape == gb.shape else np.sum(gb))

    return Node(out_val, parents, backward_fn)


def scale(a, c: float) -> Node:
    """Multiply by a python scalar constant."""
    c = float(c)
    if not isinstance(a, Node):
        return Node(_value(a) * c)
    out_val = a.value * c

    def backward_fn(g):
        _accumulate(a, g * c)

    return Node(out_val, (a,), backward_fn)


def affine(x, w, b) -> Node:
    """x @ w + b with x:(B,n), w:(n,m), b:(m,). Any operand may be constant."""
    xv, wv, bv = _value(x), _value(w), _value(b)
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0]:
        raise GraphError(f"affine: bad shapes x{xv.shape} w{wv.shape}")
    if bv.shape != (wv.shape[1],):
        raise GraphError(f"affine: bad bias shape {bv.shape} for w{wv.shape}")
    out_val = xv @ wv + bv
    parents = tuple(p for p in (x, w, b) if isinstance(p, Node))

    def backward_fn(g):
        if isinstance(x, Node):
            _accumulate(x, g @ wv.T)
        if isinstance(w, Node):
            _accumulate(w, xv.T @ g)
        if isinstance(b, Node):
            _accumulate(b, g.sum(axis=0))

    return Node(out_val, parents, backward_fn)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    flat = np.atleast_1d(np.asarray(x, dtype=np.float64))
    out = np.empty_like(flat)
    pos = flat >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    ex = np.exp(flat[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.reshape(np.shape(x))


def mish(a) -> Node:
    """x * tanh(softplus(x)), stable at both asymptotes."""
    xv = _value(a)
    tsp = np.tanh(np.logaddexp(0.0, xv))
    out_val = xv * tsp
    if not isinstance(a, Node):
        return Node(out_val)

    def backward_fn(g):
        sig = _sigmoid_np(xv)
        _accumulate(a, g * (tsp + xv * (1.0 - tsp * tsp) * sig))

    return Node(out_val, (a,), backward_fn)


def logistic(a) -> Node:
    xv = _value(a)
    s = _sigmoid_np(xv)
    if not isinstance(a, Node):
        return Node(s)

    def backward_fn(g):
        _accumulate(a, g * s * (1.0 - s))

    return Node(s, (a,), backward_fn)


def exp(a) -> Node:
    out_val = np.exp(_value(a))
    if not isinstance(a, Node):
        return Node(out_val)

    def backward_fn(g):
        _accumulate(a, g * out_val)

    return Node(out_val, (a,), backward_fn)


def log(a) -> Node:
    xv = _value(a)
    out_val = np.log(xv)
    if not isinstance(a, Node):
        return Node(out_val)

    def backward_fn(g):
        _accumulate(a, g / xv)

    return Node(out_val, (a,), backward_fn)


def square(a) -> Node:
    xv = _value(a)
    out_val = xv * xv
    if not isinstance(a, Node):
        return Node(out_val)

    def backward_fn(g):
        _accumulate(a, g * (2.0 * xv))

    return Node(out_val, (a,), backward_fn)


def clip(a, low: float, high: float) -> Node:
    """Elementwise clamp to [low, high]; gradient passes only strictly inside."""
    if not low < high:
        raise GraphError(f"clip needs low < high, got [{low}, {high}]")
    xv = _value(a)
    out_val = np.clip(xv, low, high)
    if not isinstance(a, Node):
        return Node(out_val)
    inside = (xv > low) & (xv < high)

    def backward_fn(g):
        _accumulate(a, g * inside)

    return Node(out_val, (a,), backward_fn)


def minimum(a, b) -> Node:
    """Elementwise minimum; on ties the gradient goes to the first operand."""
    av, bv = _value(a), _value(b)
    _check_shapes(av, bv, "minimum")
    first = av <= bv
    out_val = np.where(first, av, bv)
    parents = tuple(x for x in (a, b) if isinstance(x, Node))

    def backward_fn(g):
        if isinstance(a, Node):
            _accumulate(a, g * first)
        if isinstance(b, Node):
            _accumulate(b, g * ~first)

    return Node(out_val, parents, backward_fn)


def sum_rows(a) -> Node:
    """(B, d) -> (B,) row sums."""
    xv = _value(a)
    if xv.ndim != 2:
        raise GraphError(f"sum_rows expects a 2-d array, got shape {xv.shape}")
    out_val = xv.sum(axis=1)
    if not isinstance(a, Node):
        return Node(out_val)

    def backward_fn(g):
        _accumulate(a, np.repeat(g[:, None], xv.shape[1], axis=1))

    return Node(out_val, (a,), backward_fn)


def sum_all(a) -> Node:
    xv = _value(a)
    out_val = np.asarray(xv.sum())
    if not isinstance(a, Node):
        return Node(out_val)

    def backward_fn(g):
        _accumulate(a, np.full_like(xv, float(g)))

    return Node(out_val, (a,), backward_fn)


def mean_all(a) -> Node:
    xv = _value(a)
    n = xv.size
    out_val = np.asarray(xv.mean())
    if not isinstance(a, Node):
        return Node(out_val)

    def backward_fn(g):
        _accumulate(a, np.full_like(xv, float(g) / n))

    return Node(out_val, (a,), backward_fn)


def concat_cols(parts) -> Node:
    """Column-wise concatenation of 2-d blocks sharing the batch dimension."""
    vals = [_value(p) for p in parts]
    rows = {v.shape[0] for v in vals}
    if any(v.ndim != 2 for v in vals) or len(rows) != 1:
        raise GraphError("concat_cols expects 2-d blocks with equal row counts")
    out_val = np.concatenate(vals, axis=1)
    node_parts = [(i, p) for i, p in enumerate(parts) if isinstance(p, Node)]
    offsets = np.cumsum([0] + [v.shape[1] for v in vals])

    def backward_fn(g):
        for i, p in node_parts:
            _accumulate(p, g[:, offsets[i]:offsets[i + 1]])

    return Node(out_val, tuple(p for _, p in node_parts), backward_fn)


def stop_gradient(a) -> Node:
    """Same value, detached: the backward pass treats it as a leaf constant."""
    return Node(_value(a))


def backward(root: Node):
    """Accumulate adjoints of every ancestor of a scalar root."""
    if root.value.size != 1:
        raise GraphError(f"backward root must be scalar, got shape {root.value.shape}")
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    root.adjoint = np.ones_like(root.value)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.adjoint)
