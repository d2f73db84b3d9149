"""Dense float64 tensors with a reverse-mode differentiation tape.

The op set covers exactly what the forecasting networks need:
elementwise arithmetic with leading-axis broadcasting, matmul,
activations, axis reductions, and shape plumbing (concat / slice /
pad / tile / reshape).  Every op on tracked inputs records its parents
and a vector-Jacobian callback on the result; ``backward`` walks the
resulting tape once in reverse topological order and returns gradients
for the tracked leaves.  The tape is rebuilt on every forward pass and
never mutated, so calling ``backward`` twice yields identical results.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense float64 array, optionally recorded on the tape.

    ``tracked`` leaves (parameters) receive gradients from ``backward``.
    Results of ops inherit tracking from their inputs.  Tensors compare
    and hash by identity so they can key gradient maps.
    """

    __slots__ = ("data", "op", "parents", "vjp", "tracked")

    def __init__(self, data, tracked: bool = False, *, op: str = "leaf",
                 parents: tuple = (), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tracked = tracked
        self.op = op
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same values, off the tape."""
        return Tensor(self.data)

    def __repr__(self):
        tag = f" op={self.op}" if self.op != "leaf" else ""
        return f"Tensor(shape={self.shape}, tracked={self.tracked}{tag})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return multiply(self, Tensor(-1.0))

    def mean(self, axis=None):
        return mean(self, axis)

    def sum(self, axis=None):
        return reduce_sum(self, axis)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, op: str, parents: tuple,
            vjp: Callable) -> Tensor:
    if _GRAD_ENABLED and any(p.tracked for p in parents):
        return Tensor(data, tracked=True, op=op, parents=parents, vjp=vjp)
    return Tensor(data, op=op)


def custom_op(op: str, inputs: Sequence[Tensor], data: np.ndarray,
              vjp: Callable) -> Tensor:
    """Register a fused op on the tape.

    ``vjp(g)`` must return one gradient array (or None) per input, in
    order.  Used by the layer kernels (convolution, recurrent cells)
    whose backward pass is hand-written.
    """
    return _result(np.asarray(data, dtype=np.float64), op, tuple(inputs), vjp)


# ---------------------------------------------------------------------------
# broadcasting helpers: equal shapes, scalars, or suffix-aligned expansion
# over leading axes (the only forms the model composition uses)

def _check_binary_shapes(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    small, big = (a, b) if a.ndim <= b.ndim else (b, a)
    if big.shape[big.ndim - small.ndim:] == small.shape:
        return
    raise ShapeError(
        f"{op}: shapes {a.shape} and {b.shape} are not equal, scalar, or "
        f"leading-axis broadcastable")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce an output gradient back to an operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    stretched = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape))
                      if s == 1 and gs != 1)
    if stretched:
        g = g.sum(axis=stretched, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic and activations

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary_shapes(a.data, b.data, "add")
    return _result(a.data + b.data, "add", (a, b),
                   lambda g: (_unbroadcast(g, a.data.shape),
                              _unbroadcast(g, b.data.shape)))


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _check_binary_shapes(a.data, b.data, "subtract")
    return _result(a.data - b.data, "subtract", (a, b),
                   lambda g: (_unbroadcast(g, a.data.shape),
                              _unbroadcast(-g, b.data.shape)))


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _check_binary_shapes(a.data, b.data, "multiply")
    return _result(a.data * b.data, "multiply", (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.data.shape),
                              _unbroadcast(g * a.data, b.data.shape)))


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0
    return _result(np.where(mask, t.data, 0.0), "relu", (t,),
                   lambda g: (g * mask,))


def tanh(t: Tensor) -> Tensor:
    out = np.tanh(t.data)
    return _result(out, "tanh", (t,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split form avoids exp overflow warnings for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(t: Tensor) -> Tensor:
    out = _sigmoid(np.asarray(t.data, dtype=np.float64))
    return _result(out, "sigmoid", (t,), lambda g: (g * out * (1.0 - out),))


def square(t: Tensor) -> Tensor:
    return _result(t.data * t.data, "square", (t,),
                   lambda g: (2.0 * g * t.data,))


# ---------------------------------------------------------------------------
# reductions

def _check_axis(t: Tensor, axis: int, op: str) -> int:
    if not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for shape {t.shape}")
    return axis % t.ndim


def mean(t: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        n = t.size
        return _result(np.mean(t.data), "mean", (t,),
                       lambda g: (np.broadcast_to(g / n, t.shape).copy(),))
    ax = _check_axis(t, axis, "mean")
    n = t.shape[ax]
    return _result(
        np.mean(t.data, axis=ax), "mean", (t,),
        lambda g: (np.broadcast_to(np.expand_dims(g / n, ax), t.shape).copy(),))


def reduce_sum(t: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        return _result(np.sum(t.data), "sum", (t,),
                       lambda g: (np.broadcast_to(g, t.shape).copy(),))
    ax = _check_axis(t, axis, "sum")
    return _result(
        np.sum(t.data, axis=ax), "sum", (t,),
        lambda g: (np.broadcast_to(np.expand_dims(g, ax), t.shape).copy(),))


# ---------------------------------------------------------------------------
# matmul

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(
            f"matmul: operands must have rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner dimensions disagree, {a.shape} @ {b.shape}")

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)),
                          a.data.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g),
                          b.data.shape)
        return ga, gb

    return _result(np.matmul(a.data, b.data), "matmul", (a, b), vjp)


# ---------------------------------------------------------------------------
# shape plumbing

def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat: empty input list")
    ax = _check_axis(tensors[0], axis, "concat")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
                i != ax and t.shape[i] != ref[i] for i in range(t.ndim)):
            raise ShapeError(
                f"concat: shape {t.shape} incompatible with {ref} on axis {ax}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(piece)
                     for piece in np.split(g, bounds, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax),
                   "concat", tuple(tensors), vjp)


def slice_axis(t: Tensor, axis: int, start: int, stop: int) -> Tensor:
    ax = _check_axis(t, axis, "slice")
    n = t.shape[ax]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice: range [{start}:{stop}] invalid for axis "
                         f"{ax} of shape {t.shape}")
    index = tuple(slice(None) if i != ax else slice(start, stop)
                  for i in range(t.ndim))

    def vjp(g):
        full = np.zeros(t.shape)
        full[index] = g
        return (full,)

    return _result(t.data[index].copy(), "slice", (t,), vjp)


def pad_time_zeros(t: Tensor, target_len: int) -> Tensor:
    """Append zero rows along the time axis (second to last) up to target_len."""
    if t.ndim < 2:
        raise ShapeError(f"pad_time_zeros: need rank >= 2, got {t.shape}")
    cur = t.shape[-2]
    if cur > target_len:
        raise ShapeError(
            f"pad_time_zeros: length {cur} exceeds target {target_len}")
    widths = [(0, 0)] * t.ndim
    widths[-2] = (0, target_len - cur)

    def vjp(g):
        index = tuple(slice(None) for _ in range(t.ndim - 2)) + (
            slice(0, cur), slice(None))
        return (np.ascontiguousarray(g[index]),)

    return _result(np.pad(t.data, widths), "pad_time_zeros", (t,), vjp)


def tile_time(v: Tensor, length: int) -> Tensor:
    """Broadcast a feature vector [..., F] across time: [..., length, F]."""
    out_shape = v.shape[:-1] + (length, v.shape[-1])
    data = np.broadcast_to(np.expand_dims(v.data, -2), out_shape).copy()
    return _result(data, "tile_time", (v,), lambda g: (g.sum(axis=-2),))


def reshape(t: Tensor, shape: tuple) -> Tensor:
    return _result(t.data.reshape(shape), "reshape", (t,),
                   lambda g: (g.reshape(t.shape),))


def transpose(t: Tensor, axes: tuple) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(t.data, axes), "transpose", (t,),
                   lambda g: (np.transpose(g, inverse),))


def broadcast_to(t: Tensor, shape: tuple) -> Tensor:
    try:
        data = np.broadcast_to(t.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: {t.shape} -> {shape}") from exc
    return _result(data, "broadcast_to", (t,),
                   lambda g: (_unbroadcast(g, t.data.shape),))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise ShapeError(f"stack: ragged shapes {ref} vs {t.shape}")

    def vjp(g):
        return tuple(np.ascontiguousarray(piece.squeeze(axis)) for piece in
                     np.split(g, len(tensors), axis=axis))

    return _result(np.stack([t.data for t in tensors], axis=axis),
                   "stack", tuple(tensors), vjp)


# ---------------------------------------------------------------------------
# backward

def _toposort(root: Tensor) -> list:
    order: list[Tensor] = []
    seen: set[int] = set()
    work: list[tuple[Tensor, bool]] = [(root, False)]
    while work:
        node, expanded = work.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        work.append((node, True))
        for p in node.parents:
            if p.tracked and id(p) not in seen:
                work.append((p, False))
    return order  # parents precede consumers


def backward(loss: Tensor) -> dict:
    """Reverse-accumulate gradients of a scalar loss.

    Returns a map from each tracked leaf tensor reachable from the loss
    to its gradient (same shape).  Untracked tensors never appear.
    """
    if loss.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got {loss.shape}")
    if not loss.tracked:
        raise ValueError("backward: loss is not tracked on any tape")
    order = _toposort(loss)
    grads: dict[Tensor, np.ndarray] = {loss: np.ones(())}
    leaves: dict[Tensor, Tensor] = {}
    for node in reversed(order):
        g = grads.pop(node, None)
        if g is None:
            continue
        if not node.parents:
            leaves[node] = Tensor(g)
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.tracked:
                continue
            acc = grads.get(parent)
            grads[parent] = pg if acc is None else acc + pg
    return leaves


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor],
               eps: float = 1e-6, max_coords: int = 6,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error of tape gradients vs central finite differences.

    ``fn`` is a zero-argument callable returning a scalar tracked Tensor;
    it must be deterministic and read parameter values at call time.  At
    most ``max_coords`` coordinates per parameter are probed.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    grads = backward(fn())
    worst = 0.0
    for p in params:
        got = grads.get(p)
        analytic = np.zeros_like(p.data) if got is None else got.data
        n = p.size
        coords = (range(n) if n <= max_coords
                  else rng.choice(n, size=max_coords, replace=False))
        for idx in coords:
            original = p.data.flat[idx]
            with no_grad():
                p.data.flat[idx] = original + eps
                f_plus = float(fn().data)
                p.data.flat[idx] = original - eps
                f_minus = float(fn().data)
            p.data.flat[idx] = original
            central = (f_plus - f_minus) / (2.0 * eps)
            a = analytic.flat[idx]
            rel = abs(a - central) / max(abs(a), abs(central), 1e-8)
            worst = max(worst, rel)
    return worst
