"""Reverse-mode automatic differentiation over dense 2-D float64 arrays.

Every tensor is a matrix.  Operations record a backward rule on their
output; ``backward(loss)`` topologically sorts the reachable graph and
replays it in reverse, accumulating gradients into every tensor that
requires them.  Gradients of intermediate (non-leaf) tensors are freed as
soon as they have been consumed, which keeps the peak working set to the
active frontier instead of the whole tape.

The primitive set is exactly what the network layers need; there is no
broadcasting and no N-D support by design.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, DegenerateRowError, ShapeError

Array = np.ndarray


class _Op:
    """One recorded operation: input tensors plus a backward rule.

    The backward rule receives the output gradient and returns one array
    (or None) per input, aligned with ``inputs``.  Returned arrays are
    always accumulated, never adopted, so rules may alias their argument.
    """

    __slots__ = ("inputs", "backward")

    def __init__(self, inputs: Sequence["Tensor"], backward: Callable[[Array], tuple]):
        self.inputs = tuple(inputs)
        self.backward = backward


class Tensor:
    """Dense matrix of 64-bit reals, optionally tracked for differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        # leaf parameters carry a zeroed accumulator from the start
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._op = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def is_leaf(self) -> bool:
        return self._op is None

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def __repr__(self) -> str:  # pragma: no cover
        tag = self.name or ("leaf" if self.is_leaf() else "op")
        return f"Tensor({self.rows}x{self.cols}, {tag}, requires_grad={self.requires_grad})"


def tensor(data) -> Tensor:
    """Wrap an array as a constant (non-differentiated) tensor."""
    return Tensor(data, requires_grad=False)


def parameter(data, name: str | None = None) -> Tensor:
    """Wrap an array as a trainable leaf."""
    return Tensor(data, requires_grad=True, name=name)


def scalar(value: float) -> Tensor:
    return Tensor(np.array([[float(value)]]), requires_grad=False)


def record(data: Array, inputs: Sequence[Tensor], backward: Callable[[Array], tuple]) -> Tensor:
    """Create an op output.  Detaches automatically if no input needs grads."""
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(data, dtype=np.float64)
    if out.data.ndim != 2:
        raise ShapeError(f"op produced non-2-D output of shape {out.data.shape}")
    out.grad = None
    out.name = None
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._op = _Op(inputs, backward)
    else:
        out.requires_grad = False
        out._op = None
    return out


class Tape:
    """Topologically ordered view of the ops reachable from a root tensor."""

    def __init__(self, root: Tensor):
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            if node._op is not None:
                for parent in node._op.inputs:
                    if id(parent) not in seen:
                        stack.append((parent, False))
        self.nodes = order  # every op's inputs precede it

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, free_intermediate_grads: bool = True) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from ``loss``.

    Repeated calls without zeroing accumulate.  Gradients of non-leaf
    tensors are dropped once consumed unless ``free_intermediate_grads``
    is False.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward target must be 1x1, got {loss.shape}")
    tape = Tape(loss)
    loss.grad = np.ones((1, 1))
    for node in reversed(tape.nodes):
        op = node._op
        if op is None or node.grad is None:
            continue
        contributions = op.backward(node.grad)
        for parent, g in zip(op.inputs, contributions):
            if g is None or not parent.requires_grad:
                continue
            if g.shape != parent.shape:
                raise ShapeError(
                    f"backward produced grad of shape {g.shape} for tensor {parent.shape}"
                )
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g
        if free_intermediate_grads:
            node.grad = None


def zero_gradients(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# primitives


def _check_same_shape(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} x {b.shape}")
    out = a.data @ b.data

    def bw(g: Array):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return record(out, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def bw(g: Array):
        ga = g * b.data if a.requires_grad else None
        gb = g * a.data if b.requires_grad else None
        return ga, gb

    return record(a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return record(a.data * c, (a,), lambda g: (g * c,))


def scalar_mul(s: Tensor, m: Tensor) -> Tensor:
    """Multiply a matrix by a 1x1 tape scalar."""
    if s.shape != (1, 1):
        raise ShapeError(f"scalar_mul: scalar operand must be 1x1, got {s.shape}")

    def bw(g: Array):
        gs = np.array([[np.vdot(g, m.data)]]) if s.requires_grad else None
        gm = g * s.data[0, 0] if m.requires_grad else None
        return gs, gm

    return record(m.data * s.data[0, 0], (s, m), bw)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return record(out, (a,), lambda g: (g * (a.data > 0.0),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,))


def log(a: Tensor, floor: float = 1e-12) -> Tensor:
    """Natural log with the argument clamped below at ``floor``."""
    clamped = np.maximum(a.data, floor)
    out = np.log(clamped)
    mask = a.data > floor
    return record(out, (a,), lambda g: (g * mask / clamped,))


def transpose(a: Tensor) -> Tensor:
    return record(a.data.T, (a,), lambda g: (g.T,))


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.rows != b.rows:
        raise ShapeError(f"concat_cols: row counts {a.rows} and {b.rows} differ")
    out = np.hstack([a.data, b.data])
    split = a.cols
    return record(out, (a, b), lambda g: (g[:, :split], g[:, split:]))


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: index list must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.rows):
        raise ShapeError(f"gather_rows: index out of range for {a.rows} rows")
    out = a.data[idx]

    def bw(g: Array):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return record(out, (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    out = np.array([[a.data.sum()]])
    return record(out, (a,), lambda g: (np.full_like(a.data, g[0, 0]),))


def frobenius_sq(a: Tensor) -> Tensor:
    out = np.array([[np.vdot(a.data, a.data)]])
    return record(out, (a,), lambda g: (2.0 * g[0, 0] * a.data,))


def row_normalize(m: Tensor) -> Tensor:
    """Divide each row by its sum.  Rows of the output sum to 1."""
    r = m.data.sum(axis=1)
    zero = np.flatnonzero(r == 0.0)
    if zero.size:
        raise DegenerateRowError(int(zero[0]))
    out = m.data / r[:, None]

    def bw(g: Array):
        dot = np.einsum("ij,ij->i", g, out)
        return ((g - dot[:, None]) / r[:, None],)

    return record(out, (m,), bw)


def row_softmax(m: Tensor) -> Tensor:
    shifted = m.data - m.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g: Array):
        dot = np.einsum("ij,ij->i", g, out)
        return (out * (g - dot[:, None]),)

    return record(out, (m,), bw)


def dropout(a: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Zero entries with probability ``p``, scaling survivors by 1/(1-p).

    Identity (the same tensor object) when not training or p == 0.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ConfigError("dropout in training mode needs an rng")
    keep = rng.random(a.shape) >= p
    factor = keep / (1.0 - p)
    return record(a.data * factor, (a,), lambda g: (g * factor,))


def pairwise_metric(x: Tensor, alpha: Tensor) -> Tensor:
    """M(i,j) = exp(relu(sum_d alpha_d |x_id - x_jd|)) as one fused op.

    The backward rule pushes gradients into both x and alpha without ever
    materializing the N x N x D difference block.
    """
    if alpha.shape != (x.cols, 1):
        raise ShapeError(
            f"pairwise_metric: alpha must be {x.cols}x1 for features {x.shape}, got {alpha.shape}"
        )
    avec = alpha.data[:, 0]
    m, gate = kernels.metric_forward(x.data, avec)

    def bw(g: Array):
        t = g * m
        t *= gate
        u = t + t.T
        dx, dalpha = kernels.metric_backward(x.data, avec, u)
        gx = dx if x.requires_grad else None
        ga = dalpha[:, None] if alpha.requires_grad else None
        return gx, ga

    return record(m, (x, alpha), bw)
