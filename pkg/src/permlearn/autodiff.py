"""A minimal reverse-mode tape for the primitives this package needs.

Only a handful of operations are supported: matmul, broadcasting add,
ReLU, scaling by a constant, log-domain row/column normalization, exp and
a squared-error loss.  Values are stored read-only on the tape so that the
backward pass can never disturb them, and :meth:`Tape.replay` re-executes
the recorded program to confirm it reproduces the same numbers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, DomainError, TapeError
from .perm import as_logits
from .sinkhorn import SinkhornConfig, axis_sum, lognorm


class Var:
    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape._nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape


@dataclass
class _Node:
    op: str
    parents: tuple
    value: np.ndarray
    params: dict
    cache: np.ndarray | None = None


def _frozen(a, copy: bool = True) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=copy or None)
    a.flags.writeable = False
    return a


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


_FORWARD: dict[str, Callable] = {
    "leaf": None,
    "matmul": lambda a, b, transpose_a=False: np.matmul(_swap(a) if transpose_a else a, b),
    "add": lambda a, b: a + b,
    "relu": lambda a: np.maximum(a, 0.0),
    "scale": lambda a, c: a * c,
    "row_lognorm": lambda a: lognorm(a, -1)[0],
    "col_lognorm": lambda a: lognorm(a, -2)[0],
    "exp": np.exp,
    "sq_error": lambda a, target: np.sum((a - target) ** 2),
}


class Tape:
    """Records a straight-line program over numpy arrays."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self.meta: dict = {}

    def __len__(self):
        return len(self._nodes)

    def _push(self, op, parents, params=None) -> Var:
        params = params or {}
        for p in parents:
            if p.tape is not self:
                raise TapeError("variable belongs to a different tape")
        args = [p.value for p in parents]
        value = _frozen(_FORWARD[op](*args, **params), copy=False)
        self._nodes.append(_Node(op, tuple(p.index for p in parents), value, params))
        return Var(self, len(self._nodes) - 1)

    def leaf(self, value) -> Var:
        self._nodes.append(_Node("leaf", (), _frozen(value), {}))
        return Var(self, len(self._nodes) - 1)

    def matmul(self, a: Var, b: Var, transpose_a: bool = False) -> Var:
        ka = a.shape[-2] if transpose_a else a.shape[-1]
        if ka != b.shape[-2]:
            raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")
        return self._push("matmul", (a, b), {"transpose_a": transpose_a})

    def add(self, a: Var, b: Var) -> Var:
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError as exc:
            raise DimensionError(str(exc)) from None
        return self._push("add", (a, b))

    def relu(self, a: Var) -> Var:
        return self._push("relu", (a,))

    def scale(self, a: Var, c: float) -> Var:
        return self._push("scale", (a,), {"c": float(c)})

    def _push_lognorm(self, op: str, a: Var, axis: int) -> Var:
        if a.tape is not self:
            raise TapeError("variable belongs to a different tape")
        value, weights = lognorm(a.value, axis)
        self._nodes.append(_Node(op, (a.index,), _frozen(value, copy=False), {}, _frozen(weights, copy=False)))
        return Var(self, len(self._nodes) - 1)

    def row_lognorm(self, a: Var) -> Var:
        return self._push_lognorm("row_lognorm", a, -1)

    def col_lognorm(self, a: Var) -> Var:
        return self._push_lognorm("col_lognorm", a, -2)

    def exp(self, a: Var) -> Var:
        return self._push("exp", (a,))

    def sq_error(self, a: Var, target) -> Var:
        target = _frozen(target)
        if target.shape != a.shape:
            raise DimensionError(f"target {target.shape} vs prediction {a.shape}")
        return self._push("sq_error", (a,), {"target": target})

    def sinkhorn(self, x: Var, tau: float, iterations: int, final_row_pass: bool = False) -> Var:
        """Unrolled log-domain Sinkhorn; returns the (batched) doubly stochastic matrix."""
        h = self.scale(x, 1.0 / tau)
        for _ in range(iterations):
            h = self.col_lognorm(self.row_lognorm(h))
        if final_row_pass:
            h = self.row_lognorm(h)
        return self.exp(h)

    def backward(self, out: Var, upstream=None) -> list:
        """Gradients of ``<upstream, out>`` for every node (``None`` where unreachable)."""
        if out.tape is not self:
            raise TapeError("output belongs to a different tape")
        grads: list = [None] * len(self._nodes)
        seed = np.ones_like(out.value) if upstream is None else np.asarray(upstream, dtype=np.float64)
        if seed.shape != out.shape:
            raise DimensionError(f"upstream {seed.shape} vs output {out.shape}")
        grads[out.index] = seed
        for k in range(out.index, -1, -1):
            g = grads[k]
            node = self._nodes[k]
            if g is None or node.op == "leaf":
                continue
            pv = [self._nodes[i].value for i in node.parents]
            for i, pg in zip(node.parents, self._vjp(node, pv, g)):
                grads[i] = pg if grads[i] is None else grads[i] + pg
        return grads

    @staticmethod
    def _vjp(node: _Node, pv, g):
        op, y = node.op, node.value
        if op == "matmul":
            a, b = pv
            if node.params["transpose_a"]:
                ga = np.matmul(b, _swap(g))
                gb = np.matmul(a, g)
            else:
                ga = np.matmul(g, _swap(b))
                gb = np.matmul(_swap(a), g)
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
        if op == "add":
            a, b = pv
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
        if op == "relu":
            return (g * (pv[0] > 0),)  # subgradient 0 at 0
        if op == "scale":
            return (g * node.params["c"],)
        if op == "row_lognorm":
            return (g - node.cache * axis_sum(g, -1),)
        if op == "col_lognorm":
            return (g - node.cache * axis_sum(g, -2),)
        if op == "exp":
            return (g * y,)
        if op == "sq_error":
            return (2.0 * (pv[0] - node.params["target"]) * g,)
        raise TapeError(f"no backward rule for {op!r}")

    def replay(self, leaves: dict | None = None) -> list:
        """Re-run the recorded program, optionally with new leaf values; returns all values."""
        leaves = leaves or {}
        values: list = []
        for k, node in enumerate(self._nodes):
            if node.op == "leaf":
                values.append(np.asarray(leaves.get(k, node.value), dtype=np.float64))
            else:
                values.append(_FORWARD[node.op](*(values[i] for i in node.parents), **node.params))
        return values


@dataclass
class SinkhornTrace:
    tape: Tape
    x: Var
    out: Var
    cfg: SinkhornConfig


def sinkhorn_forward(X, cfg: SinkhornConfig | None = None) -> SinkhornTrace:
    cfg = cfg or SinkhornConfig()
    X = as_logits(X)
    tape = Tape()
    x = tape.leaf(X)
    out = tape.sinkhorn(x, cfg.tau, cfg.iterations, cfg.final_row_pass)
    tape.meta["cfg"] = cfg
    return SinkhornTrace(tape, x, out, cfg)


def sinkhorn_vjp(X, upstream, cfg: SinkhornConfig | None = None, trace: SinkhornTrace | None = None) -> np.ndarray:
    """d<upstream, S^L(X / tau)>/dX through every unrolled normalization round."""
    cfg = cfg or SinkhornConfig()
    X = as_logits(X)
    if trace is None:
        trace = sinkhorn_forward(X, cfg)
    elif trace.cfg != cfg:
        raise TapeError(f"tape was recorded with {trace.cfg}, backward requested with {cfg}")
    elif not np.array_equal(trace.x.value, X):
        raise TapeError("tape was recorded for a different input matrix")
    grads = trace.tape.backward(trace.out, upstream)
    g = grads[trace.x.index]
    return np.zeros_like(X) if g is None else g


def dense_forward_backward(W, b, x, upstream, relu: bool = True):
    """Affine layer ``x @ W.T + b`` (optionally ReLU) and its exact reverse-mode gradients.

    Returns ``(output, {"W": dW, "b": db, "x": dx})``.
    """
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"inconsistent shapes W{W.shape} b{b.shape} x{x.shape}")
    tape = Tape()
    tw, tb, tx = tape.leaf(W.T), tape.leaf(b), tape.leaf(x)
    h = tape.add(tape.matmul(tx, tw), tb)
    if relu:
        h = tape.relu(h)
    grads = tape.backward(h, upstream)
    return np.array(h.value), {"W": grads[tw.index].T, "b": grads[tb.index], "x": grads[tx.index]}


_STENCILS = {
    2: ((1, 0.5), (-1, -0.5)),
    4: ((2, -1 / 12), (1, 8 / 12), (-1, -8 / 12), (-2, 1 / 12)),
}


def central_difference(f: Callable, x0, step: float = 1e-5, order: int = 2, batched: bool = False) -> np.ndarray:
    """Central differences of a scalar ``f``; ``order`` 2 is the 3-point rule, 4 the 5-point rule.

    With ``batched=True``, ``f`` takes a stack of points of shape ``(K, *x0.shape)``
    and returns ``K`` values, and is called once.
    """
    if order not in _STENCILS:
        raise DomainError(f"order must be one of {sorted(_STENCILS)}")
    x0 = np.asarray(x0, dtype=np.float64)
    stencil = _STENCILS[order]
    m = x0.size
    points = np.repeat(x0.reshape(1, -1), m * len(stencil), axis=0)
    for s, (offset, _) in enumerate(stencil):
        points[s * m + np.arange(m), np.arange(m)] += offset * step
    points = points.reshape(-1, *x0.shape)
    if batched:
        values = np.asarray(f(points), dtype=np.float64).reshape(-1)
    else:
        values = np.array([f(p) for p in points], dtype=np.float64)
    if not np.all(np.isfinite(values)):
        k = int(np.flatnonzero(~np.isfinite(values))[0]) % m
        raise DomainError(f"f is not finite near component {k}")
    values = values.reshape(len(stencil), m)
    weights = np.array([w for _, w in stencil])
    return (weights @ values / step).reshape(x0.shape)


def max_relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


def finite_diff_check(f: Callable, x0, step: float = 1e-5, grad=None, order: int = 2, batched_f: Callable | None = None) -> float:
    """Worst relative error between central differences of ``f`` and an analytic gradient.

    ``f`` maps a parameter array to a scalar.  If ``grad`` is omitted, ``f``
    must instead return ``(value, gradient)`` and is called once at ``x0`` for
    the analytic side.  ``order=4`` uses the 5-point stencil, which tolerates
    a larger step and so less roundoff in ``f``.  ``batched_f``, if given,
    evaluates the scalar on a stack of points and is used for the differences.
    """
    if not step > 0:
        raise DomainError("step must be positive")
    x0 = np.asarray(x0, dtype=np.float64)
    if grad is None:
        value, grad = f(x0)
        scalar = lambda x: f(x)[0]  # noqa: E731
    else:
        scalar = f
        value = f(x0)
    if not np.isfinite(value):
        raise DomainError("f(x0) is not finite")
    if batched_f is not None:
        numeric = central_difference(batched_f, x0, step, order, batched=True)
    else:
        numeric = central_difference(scalar, x0, step, order)
    return max_relative_error(grad, numeric)
