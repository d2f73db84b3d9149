"""Parameterized layers, three-layer stacks, initialization, and Adam.

All layers accept inputs with arbitrary leading batch axes; the last
axis is features and, for temporal layers, the second-to-last is time.
Parameters are tracked leaf tensors so the tape delivers gradients for
them through any composition.
"""

from __future__ import annotations

import math
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import kernels
from .tensor import (Tensor, ShapeError, add, concat, custom_op, matmul,
                     relu, reshape, slice_axis, tanh, transpose)

ACTIVATIONS = ("relu", "tanh", "linear")


def glorot_uniform(rng: np.random.Generator, shape: tuple,
                   fan_in: int | None = None,
                   fan_out: int | None = None) -> np.ndarray:
    """Glorot-uniform draw, U(-limit, +limit) with limit = sqrt(6/(fi+fo)).

    Fans default from the shape: [in, out] for matrices, [k, in, out]
    for convolution kernels (receptive-field scaled).
    """
    if fan_in is None or fan_out is None:
        if len(shape) == 2:
            fan_in, fan_out = shape
        elif len(shape) == 3:
            fan_in, fan_out = shape[0] * shape[1], shape[0] * shape[2]
        else:
            raise ShapeError(f"glorot_uniform: cannot infer fans for {shape}")
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _apply_activation(t: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return relu(t)
    if activation == "tanh":
        return tanh(t)
    if activation == "linear":
        return t
    raise ValueError(f"unknown activation {activation!r}")


class DenseLayer:
    """Affine map on the last axis followed by an activation."""

    kind = "dense"

    def __init__(self, weight: Tensor, bias: Tensor, activation: str = "relu"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.weight = weight
        self.bias = bias
        self.activation = activation

    @classmethod
    def create(cls, rng: np.random.Generator, in_dim: int, out_dim: int,
               activation: str = "relu") -> "DenseLayer":
        return cls(Tensor(glorot_uniform(rng, (in_dim, out_dim)), tracked=True),
                   Tensor(np.zeros(out_dim), tracked=True), activation)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"dense: input features {x.shape[-1]} != "
                             f"{self.in_dim}")
        squeeze = x.ndim == 1
        if squeeze:
            x = reshape(x, (1, x.shape[0]))
        out = add(matmul(x, self.weight), self.bias)
        if squeeze:
            out = reshape(out, (self.out_dim,))
        return _apply_activation(out, self.activation)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "weight", self.weight
        yield "bias", self.bias


class Conv1DLayer:
    """Same-padded 1D cross-correlation over the time axis.

    Kernel layout is [width, in, out]; temporal length is preserved.
    Forward and backward are fused into a single tape node built from a
    handful of large matmuls (one per kernel tap).
    """

    kind = "conv"

    def __init__(self, kernel: Tensor, bias: Tensor, activation: str = "relu"):
        self.kernel = kernel
        self.bias = bias
        self.activation = activation

    @classmethod
    def create(cls, rng: np.random.Generator, in_dim: int, out_dim: int = 32,
               width: int = 3, activation: str = "relu") -> "Conv1DLayer":
        return cls(Tensor(glorot_uniform(rng, (width, in_dim, out_dim)),
                          tracked=True),
                   Tensor(np.zeros(out_dim), tracked=True), activation)

    @property
    def in_dim(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_dim(self) -> int:
        return self.kernel.shape[2]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim < 2:
            raise ShapeError(f"conv1d: need [.., T, C] input, got {x.shape}")
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"conv1d: input channels {x.shape[-1]} != "
                             f"{self.in_dim}")
        k = self.kernel.shape[0]
        c_in, c_out = self.in_dim, self.out_dim
        lead = x.shape[:-2]
        steps = x.shape[-2]
        pad_left = (k - 1) // 2
        pad_right = k - 1 - pad_left
        kernel, bias, act = self.kernel, self.bias, self.activation

        # one GEMM over unrolled taps: [B*T, k*in] @ [k*in, out]
        xflat = x.data.reshape((-1, steps, c_in))
        xp = np.pad(xflat, ((0, 0), (pad_left, pad_right), (0, 0)))
        cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)
        cols = np.ascontiguousarray(cols.transpose(0, 1, 3, 2)).reshape(
            -1, k * c_in)
        k2 = kernel.data.reshape(k * c_in, c_out)
        pre = cols @ k2
        pre += bias.data
        mask = pre > 0 if act == "relu" else None
        out = np.where(mask, pre, 0.0) if act == "relu" else pre

        def vjp(g):
            da = g.reshape(pre.shape)
            if act == "relu":
                da = da * mask
            dkernel = (cols.T @ da).reshape(k, c_in, c_out)
            dcols = (da @ k2.T).reshape(-1, steps, k, c_in)
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, j:j + steps, :] += dcols[:, :, j, :]
            dx = dxp[:, pad_left:pad_left + steps, :].reshape(x.shape)
            return dx, dkernel, da.sum(axis=0)

        return custom_op("conv1d", (x, kernel, bias),
                         out.reshape(lead + (steps, c_out)), vjp)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "kernel", self.kernel
        yield "bias", self.bias


class GRULayer:
    """Gated recurrent layer, tanh candidate, zero initial state.

    Update rule per step t (gates use the previous hidden state h):
        z = sigmoid(x W_u + h U_u + b_u)
        r = sigmoid(x W_r + h U_r + b_r)
        n = tanh(x W_c + (r * h) U_c + b_c)
        h = (1 - z) * h + z * n
    ``output_mode`` selects the full sequence [.., T, H] or only the final
    step [.., H].
    """

    kind = "gru"

    def __init__(self, w_update, w_reset, w_candidate, u_update, u_reset,
                 u_candidate, b_update, b_reset, b_candidate,
                 output_mode: str = "sequence"):
        if output_mode not in ("sequence", "last-step"):
            raise ValueError(f"unknown output mode {output_mode!r}")
        self.w_update = w_update
        self.w_reset = w_reset
        self.w_candidate = w_candidate
        self.u_update = u_update
        self.u_reset = u_reset
        self.u_candidate = u_candidate
        self.b_update = b_update
        self.b_reset = b_reset
        self.b_candidate = b_candidate
        self.output_mode = output_mode

    @classmethod
    def create(cls, rng: np.random.Generator, in_dim: int, hidden: int = 32,
               output_mode: str = "sequence") -> "GRULayer":
        def win():
            return Tensor(glorot_uniform(rng, (in_dim, hidden)), tracked=True)

        def wrec():
            return Tensor(glorot_uniform(rng, (hidden, hidden)), tracked=True)

        def b():
            return Tensor(np.zeros(hidden), tracked=True)

        return cls(win(), win(), win(), wrec(), wrec(), wrec(), b(), b(), b(),
                   output_mode)

    @property
    def in_dim(self) -> int:
        return self.w_update.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_update.shape[1]

    def __call__(self, x: Tensor, h0: Tensor | None = None) -> Tensor:
        if x.ndim < 2:
            raise ShapeError(f"gru: need [.., T, C] input, got {x.shape}")
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"gru: input channels {x.shape[-1]} != "
                             f"{self.in_dim}")
        hidden = self.hidden
        in_dim = self.in_dim
        lead = x.shape[:-2]
        steps = x.shape[-2]
        batch = int(np.prod(lead)) if lead else 1

        # the whole layer is one tape node: input projection, recurrence
        # and layout shuffles run as plain numpy / compiled kernels
        w_all = concat((self.w_update, self.w_reset, self.w_candidate), axis=1)
        b_all = concat((self.b_update, self.b_reset, self.b_candidate), axis=0)
        u_zr = concat((self.u_update, self.u_reset), axis=1)
        u_cand = self.u_candidate

        if h0 is None:
            h0_c = np.zeros((batch, hidden))
        elif h0.shape == (batch, hidden):
            h0_c = np.ascontiguousarray(h0.data)
        else:
            raise ShapeError(f"gru: h0 shape {h0.shape} != {(batch, hidden)}")

        x2 = x.data.reshape(batch * steps, in_dim)
        xw = (x2 @ w_all.data + b_all.data).reshape(batch, steps, 3 * hidden)
        xw = np.ascontiguousarray(xw.transpose(1, 0, 2))      # [T, B, 3H]
        hseq, zs, rs, cs = kernels.gru_forward(xw, u_zr.data, u_cand.data,
                                               h0_c)
        out = np.ascontiguousarray(hseq.transpose(1, 0, 2)).reshape(
            lead + (steps, hidden))

        def vjp(g):
            gout = np.ascontiguousarray(
                g.reshape(batch, steps, hidden).transpose(1, 0, 2))
            dxw, du_zr, du_h, dh0 = kernels.gru_backward(
                hseq, zs, rs, cs, u_zr.data, u_cand.data, h0_c, gout)
            dxw2 = np.ascontiguousarray(dxw.transpose(1, 0, 2)).reshape(
                batch * steps, 3 * hidden)
            dx = (dxw2 @ w_all.data.T).reshape(x.shape)
            dw = x2.T @ dxw2
            db = dxw2.sum(axis=0)
            grads = (dx, dw, db, du_zr, du_h)
            return grads + (dh0,) if h0 is not None else grads

        inputs = (x, w_all, b_all, u_zr, u_cand)
        if h0 is not None:
            inputs = inputs + (h0,)
        result = custom_op("gru", inputs, out, vjp)
        if self.output_mode == "last-step":
            result = reshape(slice_axis(result, -2, steps - 1, steps),
                             lead + (hidden,))
        return result

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name in ("w_update", "w_reset", "w_candidate", "u_update",
                     "u_reset", "u_candidate", "b_update", "b_reset",
                     "b_candidate"):
            yield name, getattr(self, name)


class StackedBlock:
    """Exactly three layers of one kind (all dense, all conv, or all gru)."""

    def __init__(self, layers: Sequence):
        if len(layers) != 3:
            raise ValueError(f"a stacked block has 3 layers, got {len(layers)}")
        kinds = {layer.kind for layer in layers}
        if len(kinds) != 1:
            raise ValueError(f"mixed layer kinds in one block: {sorted(kinds)}")
        self.layers = list(layers)
        self.kind = self.layers[0].kind

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for i, layer in enumerate(self.layers):
            for name, p in layer.named_parameters():
                yield f"{i}/{name}", p


def make_stack(kind: str, rng: np.random.Generator, in_dim: int, width: int,
               out_dim: int | None = None,
               output_mode: str = "sequence") -> StackedBlock:
    """Build a three-layer stack.

    Dense stacks use relu on the two hidden layers and a linear output
    layer; conv stacks are relu throughout (width-3 kernels); gru stacks
    emit sequences except when ``output_mode`` selects the last step of
    the final layer.
    """
    out_dim = width if out_dim is None else out_dim
    if kind == "dense":
        layers = [DenseLayer.create(rng, in_dim, width, "relu"),
                  DenseLayer.create(rng, width, width, "relu"),
                  DenseLayer.create(rng, width, out_dim, "linear")]
    elif kind == "conv":
        layers = [Conv1DLayer.create(rng, in_dim, width),
                  Conv1DLayer.create(rng, width, width),
                  Conv1DLayer.create(rng, width, out_dim)]
    elif kind == "gru":
        layers = [GRULayer.create(rng, in_dim, width),
                  GRULayer.create(rng, width, width),
                  GRULayer.create(rng, width, out_dim, output_mode=output_mode)]
    else:
        raise ValueError(f"unknown stack kind {kind!r}")
    return StackedBlock(layers)


# ---------------------------------------------------------------------------
# optimization

class Adam:
    """Adam with bias correction over a fixed set of named parameters."""

    def __init__(self, params: Sequence[tuple[str, Tensor]] | Mapping[str, Tensor],
                 lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if isinstance(params, Mapping):
            params = list(params.items())
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for _, p in self.params]
        self._v = [np.zeros_like(p.data) for _, p in self.params]

    def step(self, grads: Mapping[Tensor, Tensor]) -> None:
        self.step_count += 1
        t = self.step_count
        for i, (name, p) in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                raise ValueError(f"adam: missing gradient for parameter {name}")
            if g.shape != p.shape:
                raise ShapeError(f"adam: gradient shape {g.shape} != parameter "
                                 f"shape {p.shape} for {name}")
            m = self._m[i]
            v = self._v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g.data
            v *= self.beta2
            v += (1.0 - self.beta2) * (g.data * g.data)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def global_norm(grads: Mapping[Tensor, Tensor]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g.data * g.data))
    return math.sqrt(total)


def clip_global_norm(grads: Mapping[Tensor, Tensor],
                     max_norm: float = 1.0) -> dict:
    """Scale all gradients jointly so their global L2 norm is <= max_norm."""
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {p: Tensor(g.data * scale) for p, g in grads.items()}
