"""Minimal reverse-mode differentiation over an append-only tape.

Values are float64 numpy arrays.  A node value is either unbatched
(scalar, vector or parameter matrix) or carries a leading batch axis;
elementwise operations follow numpy broadcasting, and the reverse sweep
sums adjoints back down to each parent's shape.  The primitive set is
fixed: all problem coefficients are compositions of the operations listed
in ``_FORWARD``.

Subgradient conventions: relu'(0) = 0 and d|x|/dx = 0 at x = 0, so runs
are reproducible at kinks.

``Eager`` evaluates the same forward kernels without recording, which
guarantees that gradient-free re-simulations are bit-identical to taped
ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import GraphConstructionError, ParameterDomainError

NodeId = int


def _as_value(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _bcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise GraphConstructionError(
            f"{op}: shapes {a.shape} and {b.shape} do not broadcast"
        ) from None


def _check_matvec(op, a, x):
    if a.ndim != 2:
        raise GraphConstructionError(f"{op}: matrix operand must be 2-d, got {a.shape}")
    if x.ndim not in (1, 2) or x.shape[-1] != a.shape[1]:
        raise GraphConstructionError(
            f"{op}: cannot apply {a.shape} matrix to operand of shape {x.shape}"
        )


def _f_add(v, payload):
    a, b = v
    _bcast("add", a, b)
    return a + b


def _f_subtract(v, payload):
    a, b = v
    _bcast("subtract", a, b)
    return a - b


def _f_multiply(v, payload):
    a, b = v
    _bcast("elementwise-multiply", a, b)
    return a * b


def _f_scale(v, payload):
    return v[0] * payload


def _f_matvec(v, payload):
    a, x = v
    _check_matvec("matrix-vector-product", a, x)
    return x @ a.T


def _f_inner(v, payload):
    a, b = v
    if a.ndim > 2 or b.ndim > 2 or a.ndim < 1 or b.ndim < 1:
        raise GraphConstructionError(
            f"inner-product: operands must be vectors, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-1]:
        raise GraphConstructionError(
            f"inner-product: last dimensions differ, {a.shape} vs {b.shape}"
        )
    _bcast("inner-product", a, b)
    return np.sum(a * b, axis=-1)


def _f_affine(v, payload):
    w, b, x = v
    _check_matvec("affine", w, x)
    if b.shape != (w.shape[0],):
        raise GraphConstructionError(
            f"affine: bias shape {b.shape} does not match weight rows {w.shape[0]}"
        )
    return x @ w.T + b


def _f_relu(v, payload):
    return np.maximum(v[0], 0.0)


def _f_abs(v, payload):
    return np.abs(v[0])


def _f_square(v, payload):
    return np.square(v[0])


def _f_sum(v, payload):
    return np.sum(v[0])


def _f_sin(v, payload):
    return np.sin(v[0])


def _f_cos(v, payload):
    return np.cos(v[0])


def _f_exp(v, payload):
    return np.exp(v[0])


_FORWARD = {
    "add": _f_add,
    "subtract": _f_subtract,
    "elementwise-multiply": _f_multiply,
    "scalar-multiply": _f_scale,
    "matrix-vector-product": _f_matvec,
    "inner-product": _f_inner,
    "affine": _f_affine,
    "relu": _f_relu,
    "absolute-value": _f_abs,
    "square": _f_square,
    "sum": _f_sum,
    "sin": _f_sin,
    "cos": _f_cos,
    "exp": _f_exp,
}

_N_PARENTS = {
    "add": 2, "subtract": 2, "elementwise-multiply": 2, "scalar-multiply": 1,
    "matrix-vector-product": 2, "inner-product": 2, "affine": 3, "relu": 1,
    "absolute-value": 1, "square": 1, "sum": 1, "sin": 1, "cos": 1, "exp": 1,
}


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum an adjoint back down to a parent's pre-broadcast shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


@dataclass
class Node:
    op: str
    parents: tuple
    value: np.ndarray
    payload: Optional[float] = None
    trainable: bool = False
    adjoint: Optional[np.ndarray] = None


class Tape:
    """Append-only computation graph with eagerly evaluated forward values.

    Nodes are identified by their index, so topological order is the
    append order by construction.  A tape is single-writer and should live
    for exactly one forward/backward pass.
    """

    def __init__(self, retain_adjoints: bool = False):
        self.nodes: list[Node] = []
        self.retain_adjoints = retain_adjoints
        self._bound: dict[int, NodeId] = {}

    def __len__(self):
        return len(self.nodes)

    def value(self, nid: NodeId) -> np.ndarray:
        return self.nodes[nid].value

    def _push(self, node: Node) -> NodeId:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def constant(self, value) -> NodeId:
        return self._push(Node("constant", (), _as_value(value)))

    def parameter(self, value, trainable: bool = True) -> NodeId:
        return self._push(Node("parameter", (), _as_value(value), trainable=trainable))

    def bind(self, array: np.ndarray, trainable: bool = True) -> NodeId:
        """Parameter node for ``array``, memoized by object identity.

        Re-binding the same array on the same tape returns the same node,
        so gradient contributions from repeated uses accumulate.  Do not
        mutate an array while a tape that bound it is alive.
        """
        key = id(array)
        nid = self._bound.get(key)
        if nid is None:
            nid = self.parameter(array, trainable=trainable)
            self._bound[key] = nid
        return nid

    def record(self, op: str, parents, payload=None) -> NodeId:
        fwd = _FORWARD.get(op)
        if fwd is None:
            raise GraphConstructionError(f"unknown op kind {op!r}")
        parents = tuple(parents)
        if len(parents) != _N_PARENTS[op]:
            raise GraphConstructionError(
                f"{op}: expected {_N_PARENTS[op]} parents, got {len(parents)}"
            )
        n = len(self.nodes)
        if any(not (0 <= p < n) for p in parents):
            raise GraphConstructionError(f"{op}: parent id out of range")
        values = tuple(self.nodes[p].value for p in parents)
        return self._push(Node(op, parents, fwd(values, payload), payload=payload))

    # Sugar, one method per primitive.
    def add(self, a, b):
        return self.record("add", (a, b))

    def sub(self, a, b):
        return self.record("subtract", (a, b))

    def mul(self, a, b):
        return self.record("elementwise-multiply", (a, b))

    def scale(self, a, c):
        return self.record("scalar-multiply", (a,), payload=float(c))

    def matvec(self, a, x):
        return self.record("matrix-vector-product", (a, x))

    def inner(self, a, b):
        return self.record("inner-product", (a, b))

    def affine(self, w, b, x):
        return self.record("affine", (w, b, x))

    def relu(self, a):
        return self.record("relu", (a,))

    def abs(self, a):
        return self.record("absolute-value", (a,))

    def square(self, a):
        return self.record("square", (a,))

    def sum(self, a):
        return self.record("sum", (a,))

    def sin(self, a):
        return self.record("sin", (a,))

    def cos(self, a):
        return self.record("cos", (a,))

    def exp(self, a):
        return self.record("exp", (a,))

    def backward(self, loss: NodeId) -> dict[NodeId, np.ndarray]:
        """Reverse sweep from ``loss``; returns gradients for trainable nodes.

        Every trainable parameter recorded on the tape appears in the
        result, with an explicit zero gradient if the loss does not depend
        on it.
        """
        if not (0 <= loss < len(self.nodes)):
            raise GraphConstructionError(f"loss node id {loss} not on tape")
        if self.nodes[loss].value.ndim != 0:
            raise GraphConstructionError(
                f"loss node must be scalar, got shape {self.nodes[loss].value.shape}"
            )
        adj: list[Optional[np.ndarray]] = [None] * len(self.nodes)
        adj[loss] = np.asarray(1.0)
        grads: dict[NodeId, np.ndarray] = {}
        for nid in range(loss, -1, -1):
            g = adj[nid]
            if g is None:
                continue
            node = self.nodes[nid]
            if node.trainable:
                grads[nid] = g
            if self.retain_adjoints:
                node.adjoint = g
            self._propagate(node, g, adj)
            if not self.retain_adjoints:
                adj[nid] = None
        for nid, node in enumerate(self.nodes):
            if node.trainable and nid not in grads:
                grads[nid] = np.zeros_like(node.value)
            if self.retain_adjoints and node.adjoint is None:
                node.adjoint = np.zeros_like(node.value)
        return grads

    def _propagate(self, node: Node, g, adj):
        op = node.op
        if op in ("constant", "parameter"):
            return
        pv = [self.nodes[p].value for p in node.parents]

        if op == "add":
            contribs = (_unbroadcast(g, pv[0].shape), _unbroadcast(g, pv[1].shape))
        elif op == "subtract":
            contribs = (_unbroadcast(g, pv[0].shape), -_unbroadcast(g, pv[1].shape))
        elif op == "elementwise-multiply":
            contribs = (
                _unbroadcast(g * pv[1], pv[0].shape),
                _unbroadcast(g * pv[0], pv[1].shape),
            )
        elif op == "scalar-multiply":
            contribs = (g * node.payload,)
        elif op == "matrix-vector-product":
            a, x = pv
            if x.ndim == 2:
                contribs = (g.T @ x, g @ a)
            else:
                contribs = (np.outer(g, x), g @ a)
        elif op == "inner-product":
            a, b = pv
            ge = np.expand_dims(g, -1)
            contribs = (_unbroadcast(ge * b, a.shape), _unbroadcast(ge * a, b.shape))
        elif op == "affine":
            w, b, x = pv
            if x.ndim == 2:
                contribs = (g.T @ x, g.sum(axis=0), g @ w)
            else:
                contribs = (np.outer(g, x), g.copy(), g @ w)
        elif op == "relu":
            contribs = (g * (pv[0] > 0.0),)
        elif op == "absolute-value":
            contribs = (g * np.sign(pv[0]),)
        elif op == "square":
            contribs = (g * 2.0 * pv[0],)
        elif op == "sum":
            contribs = (np.broadcast_to(g, pv[0].shape),)
        elif op == "sin":
            contribs = (g * np.cos(pv[0]),)
        elif op == "cos":
            contribs = (-g * np.sin(pv[0]),)
        elif op == "exp":
            contribs = (g * node.value,)
        else:  # pragma: no cover - _FORWARD and this table are kept in sync
            raise GraphConstructionError(f"no adjoint rule for op {op!r}")

        for pid, c in zip(node.parents, contribs):
            if adj[pid] is None:
                adj[pid] = np.array(c, dtype=np.float64)
            else:
                adj[pid] = adj[pid] + c


class Eager:
    """Executes the tape's forward kernels directly on numpy arrays.

    Handles are the arrays themselves; coefficient closures written
    against the tape API run unchanged (and bit-identically) in this mode.
    """

    @staticmethod
    def value(handle):
        return handle

    @staticmethod
    def constant(value):
        return _as_value(value)

    parameter = constant

    @staticmethod
    def add(a, b):
        return _f_add((a, b), None)

    @staticmethod
    def sub(a, b):
        return _f_subtract((a, b), None)

    @staticmethod
    def mul(a, b):
        return _f_multiply((a, b), None)

    @staticmethod
    def scale(a, c):
        return _f_scale((a,), float(c))

    @staticmethod
    def matvec(a, x):
        return _f_matvec((a, x), None)

    @staticmethod
    def inner(a, b):
        return _f_inner((a, b), None)

    @staticmethod
    def affine(w, b, x):
        return _f_affine((w, b, x), None)

    @staticmethod
    def relu(a):
        return _f_relu((a,), None)

    @staticmethod
    def abs(a):
        return _f_abs((a,), None)

    @staticmethod
    def square(a):
        return _f_square((a,), None)

    @staticmethod
    def sum(a):
        return _f_sum((a,), None)

    @staticmethod
    def sin(a):
        return _f_sin((a,), None)

    @staticmethod
    def cos(a):
        return _f_cos((a,), None)

    @staticmethod
    def exp(a):
        return _f_exp((a,), None)


EAGER = Eager()


def finite_difference_gradient(f, theta: np.ndarray, eps: float) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector.

    The independent oracle for gradient checking; deliberately knows
    nothing about tapes.
    """
    if not eps > 0:
        raise ParameterDomainError(f"finite-difference step must be positive, got {eps}")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += eps
        dn[i] -= eps
        fu, fd = float(f(up)), float(f(dn))
        if not (np.isfinite(fu) and np.isfinite(fd)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        grad[i] = (fu - fd) / (2.0 * eps)
    return grad
