"""Few-shot forecasting networks over tasks with heterogeneous channels.

TimeHetNet encodes the support split of a task in three stages and
forecasts each query instance from the resulting embeddings:

  stage 1  per-channel / past-target / future-target set encodings,
           aggregated over support instances;
  stage 2  per-instance embeddings u, aggregated over channels, with
           additive past- and future-target terms;
  stage 3  second round of channel / target encodings conditioned on u,
           plus a per-instance future code averaged into a single vector;
  stage 4  per-query embedding z from channels, past target and stage-3
           encodings, decoded by a dense head together with the future
           code.

Every aggregation is a mean over a set axis, so outputs are invariant
to the order of support instances and equivariant/invariant (as
appropriate) to the order of predictor channels.  Channel-series
encoders and past-target encoders come in pairs that share parameters
(the past target is treated as one more channel, zero-padded to the
full window).

HetNet is the non-temporal counterpart: the same composition applied
to the final observed value of each channel, with dense blocks only.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .layers import StackedBlock, make_stack
from .tasks import Task, TaskSplit
from .tensor import (Tensor, add, broadcast_to, concat, mean, no_grad,
                     pad_time_zeros, reshape, slice_axis, square, stack,
                     subtract, tile_time, transpose)

#: variant -> (kind of the raw-input/output "corner" blocks,
#:             kind of the intermediate "mixing" blocks)
VARIANTS = {
    "gru-corner": ("gru", "conv"),
    "conv-corner": ("conv", "gru"),
    "all-gru": ("gru", "gru"),
    "all-conv": ("conv", "conv"),
}

#: past-target encoders reuse the channel encoders' parameters
SHARED_SLOTS = {
    "past_in1": "chan_in1",
    "past_out1": "chan_out1",
    "past_in2": "chan_in2",
    "past_out2": "chan_out2",
}


def meta_loss(predicted: Tensor, target: np.ndarray | Tensor) -> Tensor:
    """Mean squared error over query instances (scalar, differentiable)."""
    target_t = target if isinstance(target, Tensor) else Tensor(target)
    if predicted.shape != target_t.shape:
        raise ValueError(f"meta_loss: prediction shape {predicted.shape} "
                         f"!= target shape {target_t.shape}")
    return mean(square(subtract(predicted, target_t)))


def batch_loss(losses: list[Tensor]) -> Tensor:
    """Mean of per-task losses (one meta-batch)."""
    if len(losses) == 1:
        return losses[0]
    return mean(stack(losses))


class TimeHetNet:
    """Set network with temporal blocks for few-shot forecasting."""

    kind = "timehetnet"

    def __init__(self, variant: str = "gru-corner", k_inf: int = 32,
                 k_pred: int = 32, share_weights: bool = True, seed: int = 0):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}, expected one of "
                             f"{sorted(VARIANTS)}")
        self.variant = variant
        self.k_inf = k_inf
        self.k_pred = k_pred
        self.share_weights = share_weights
        self.seed = seed
        corner, middle = VARIANTS[variant]
        rng = np.random.default_rng(seed)
        ki, kp = k_inf, k_pred

        nets: dict[str, StackedBlock] = {}
        # stage 1: encoders of raw series / targets
        nets["chan_in1"] = make_stack(corner, rng, 1, ki)
        nets["chan_out1"] = make_stack(corner, rng, ki, ki)
        if not share_weights:
            nets["past_in1"] = make_stack(corner, rng, 1, ki)
            nets["past_out1"] = make_stack(corner, rng, ki, ki)
        nets["fut_in1"] = make_stack("dense", rng, 1, ki)
        nets["fut_out1"] = make_stack("dense", rng, ki, ki)
        # stage 2: per-instance mixing
        nets["inst_chan"] = make_stack(middle, rng, 1 + ki, ki)
        nets["inst_past"] = make_stack(middle, rng, 1 + ki, ki)
        nets["inst_fut"] = make_stack("dense", rng, 1 + ki, ki)
        nets["inst_out"] = make_stack(middle, rng, ki, ki)
        # stage 3: support-conditioned encoders
        nets["chan_in2"] = make_stack(middle, rng, 1 + ki, ki)
        nets["chan_out2"] = make_stack(middle, rng, ki, ki)
        if not share_weights:
            nets["past_in2"] = make_stack(middle, rng, 1 + ki, ki)
            nets["past_out2"] = make_stack(middle, rng, ki, ki)
        nets["fut_net2"] = make_stack("dense", rng, 1 + ki, ki)
        # stage 4: query embedding and output head
        nets["query_in"] = make_stack(corner, rng, 2 + 2 * ki, kp)
        nets["query_out"] = make_stack(corner, rng, kp, kp)
        nets["head"] = make_stack("dense", rng, kp + ki, kp, out_dim=1)
        self.nets = nets

    def net(self, slot: str) -> StackedBlock:
        if slot in self.nets:
            return self.nets[slot]
        return self.nets[SHARED_SLOTS[slot]]

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for slot in sorted(self.nets):
            for name, p in self.nets[slot].named_parameters():
                yield f"{slot}/{name}", p

    def param_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    # -- input plumbing ----------------------------------------------------

    def _series(self, split: TaskSplit):
        """Wrap a split as (per-channel series, padded past target, future).

        Returns x as [C, N, T, 1], padded y as [N, T, 1] and y' as [N, 1].
        """
        n, t, c = split.x.shape
        x = transpose(Tensor(split.x), (2, 0, 1))            # [C, N, T]
        x = reshape(x, (c, n, t, 1))
        y = reshape(Tensor(split.y), (n, split.y.shape[1], 1))
        y = pad_time_zeros(y, t)                              # [N, T, 1]
        return x, y, Tensor(split.y_future)

    # -- inference network -------------------------------------------------

    def infer_stage1(self, support: TaskSplit):
        """Channel, past-target and future-target encodings of the support.

        Shapes for C predictors, window T, width K: [C, T, K], [T, K], [K].
        """
        if support.n_instances == 0:
            raise ValueError("inference: empty support split")
        x, y, yf = self._series(support)
        c, n, t, _ = x.shape
        ki = self.k_inf
        chan_series = reshape(x, (c * n, t, 1))
        if self.share_weights:
            joint = concat((chan_series, y), axis=0)
            enc = self.net("chan_in1")(joint)
            chan_enc = slice_axis(enc, 0, 0, c * n)
            past_enc = slice_axis(enc, 0, c * n, c * n + n)
        else:
            chan_enc = self.net("chan_in1")(chan_series)
            past_enc = self.net("past_in1")(y)
        chan_mean = mean(reshape(chan_enc, (c, n, t, ki)), axis=1)  # [C,T,K]
        past_mean = reshape(mean(past_enc, axis=0), (1, t, ki))
        if self.share_weights:
            out = self.net("chan_out1")(concat((chan_mean, past_mean), axis=0))
            chan_emb = slice_axis(out, 0, 0, c)
            past_emb = reshape(slice_axis(out, 0, c, c + 1), (t, ki))
        else:
            chan_emb = self.net("chan_out1")(chan_mean)
            past_emb = reshape(self.net("past_out1")(past_mean), (t, ki))
        fut_emb = self.net("fut_out1")(mean(self.net("fut_in1")(yf), axis=0))
        return chan_emb, past_emb, fut_emb

    def infer_stage2(self, support: TaskSplit, chan_emb: Tensor,
                     past_emb: Tensor, fut_emb: Tensor) -> Tensor:
        """Per-support-instance embeddings u, [N, T, K]."""
        x, y, yf = self._series(support)
        c, n, t, _ = x.shape
        ki = self.k_inf
        chan_ctx = broadcast_to(reshape(chan_emb, (c, 1, t, ki)),
                                (c, n, t, ki))
        term_chan = self.net("inst_chan")(
            reshape(concat((x, chan_ctx), axis=3), (c * n, t, 1 + ki)))
        term_chan = mean(reshape(term_chan, (c, n, t, ki)), axis=0)
        term_past = self.net("inst_past")(
            concat((y, broadcast_to(past_emb, (n, t, ki))), axis=2))
        fut_in = concat((yf, broadcast_to(fut_emb, (n, ki))), axis=1)
        term_fut = tile_time(self.net("inst_fut")(fut_in), t)
        return self.net("inst_out")(add(add(term_chan, term_past), term_fut))

    def infer_stage3(self, support: TaskSplit, u: Tensor):
        """Support-conditioned encodings: [C, T, K], [T, K], and the future
        code [K] (a per-instance dense encoding averaged over instances)."""
        x, y, yf = self._series(support)
        c, n, t, _ = x.shape
        ki = self.k_inf
        u_chan = broadcast_to(u, (c, n, t, ki))
        chan_series = reshape(concat((x, u_chan), axis=3), (c * n, t, 1 + ki))
        past_series = concat((y, u), axis=2)                  # [N, T, 1+K]
        if self.share_weights:
            enc = self.net("chan_in2")(concat((chan_series, past_series),
                                              axis=0))
            chan_enc = slice_axis(enc, 0, 0, c * n)
            past_enc = slice_axis(enc, 0, c * n, c * n + n)
        else:
            chan_enc = self.net("chan_in2")(chan_series)
            past_enc = self.net("past_in2")(past_series)
        chan_mean = mean(reshape(chan_enc, (c, n, t, ki)), axis=1)
        past_mean = reshape(mean(past_enc, axis=0), (1, t, ki))
        if self.share_weights:
            out = self.net("chan_out2")(concat((chan_mean, past_mean), axis=0))
            chan_emb2 = slice_axis(out, 0, 0, c)
            past_emb2 = reshape(slice_axis(out, 0, c, c + 1), (t, ki))
        else:
            chan_emb2 = self.net("chan_out2")(chan_mean)
            past_emb2 = reshape(self.net("past_out2")(past_mean), (t, ki))
        u_last = reshape(slice_axis(u, 1, t - 1, t), (n, ki))
        fut_code = mean(self.net("fut_net2")(concat((yf, u_last), axis=1)),
                        axis=0)
        return chan_emb2, past_emb2, fut_code

    # -- prediction network --------------------------------------------------

    def predict_queries(self, query: TaskSplit, chan_emb2: Tensor,
                        past_emb2: Tensor, fut_code: Tensor) -> Tensor:
        """Forecast the future target of every query instance, [N_q, 1]."""
        x, y, _ = self._series(query)
        c, n, t, _ = x.shape
        ki, kp = self.k_inf, self.k_pred
        feats = concat((
            x,
            broadcast_to(reshape(y, (1, n, t, 1)), (c, n, t, 1)),
            broadcast_to(reshape(chan_emb2, (c, 1, t, ki)), (c, n, t, ki)),
            broadcast_to(past_emb2, (c, n, t, ki)),
        ), axis=3)
        enc = self.net("query_in")(reshape(feats, (c * n, t, 2 + 2 * ki)))
        pooled = mean(reshape(enc, (c, n, t, kp)), axis=0)
        emb = self.net("query_out")(pooled)                   # [Nq, T, Kp]
        if self.net("query_out").kind == "gru":
            z = reshape(slice_axis(emb, 1, t - 1, t), (n, kp))
        else:
            z = mean(emb, axis=1)  # global average pooling over time
        return self.net("head")(concat((z, broadcast_to(fut_code, (n, self.k_inf))),
                                       axis=1))

    def forward(self, task: Task) -> Tensor:
        chan_emb, past_emb, fut_emb = self.infer_stage1(task.support)
        u = self.infer_stage2(task.support, chan_emb, past_emb, fut_emb)
        chan_emb2, past_emb2, fut_code = self.infer_stage3(task.support, u)
        return self.predict_queries(task.query, chan_emb2, past_emb2, fut_code)

    __call__ = forward

    def predict(self, task: Task) -> np.ndarray:
        with no_grad():
            return self.forward(task).data

    def loss(self, task: Task) -> Tensor:
        return meta_loss(self.forward(task), task.query.y_future)


class HetNet:
    """Dense set network on last observed values (no temporal axis)."""

    kind = "hetnet"

    def __init__(self, k: int = 32, share_weights: bool = True, seed: int = 0):
        self.k = k
        self.share_weights = share_weights
        self.seed = seed
        rng = np.random.default_rng(seed)
        nets: dict[str, StackedBlock] = {}
        nets["chan_in1"] = make_stack("dense", rng, 1, k)
        nets["chan_out1"] = make_stack("dense", rng, k, k)
        if not share_weights:
            nets["past_in1"] = make_stack("dense", rng, 1, k)
            nets["past_out1"] = make_stack("dense", rng, k, k)
        nets["fut_in1"] = make_stack("dense", rng, 1, k)
        nets["fut_out1"] = make_stack("dense", rng, k, k)
        nets["inst_chan"] = make_stack("dense", rng, 1 + k, k)
        nets["inst_past"] = make_stack("dense", rng, 1 + k, k)
        nets["inst_fut"] = make_stack("dense", rng, 1 + k, k)
        nets["inst_out"] = make_stack("dense", rng, k, k)
        nets["chan_in2"] = make_stack("dense", rng, 1 + k, k)
        nets["chan_out2"] = make_stack("dense", rng, k, k)
        if not share_weights:
            nets["past_in2"] = make_stack("dense", rng, 1 + k, k)
            nets["past_out2"] = make_stack("dense", rng, k, k)
        nets["fut_net2"] = make_stack("dense", rng, 1 + k, k)
        nets["query_in"] = make_stack("dense", rng, 2 + 2 * k, k)
        nets["query_out"] = make_stack("dense", rng, k, k)
        nets["head"] = make_stack("dense", rng, 2 * k, k, out_dim=1)
        self.nets = nets

    def net(self, slot: str) -> StackedBlock:
        if slot in self.nets:
            return self.nets[slot]
        return self.nets[SHARED_SLOTS[slot]]

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for slot in sorted(self.nets):
            for name, p in self.nets[slot].named_parameters():
                yield f"{slot}/{name}", p

    def param_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    @staticmethod
    def _features(split: TaskSplit):
        """Last observed values: x as [C, N, 1], y as [N, 1], y' as [N, 1].

        With no past target (horizon equal to the window), the target
        feature is zero, mirroring the zero-padding convention.
        """
        n, t, c = split.x.shape
        x_last = transpose(Tensor(split.x[:, t - 1, :]), (1, 0))  # [C, N]
        x_last = reshape(x_last, (c, n, 1))
        if split.y.shape[1] > 0:
            y_last = Tensor(split.y[:, -1:])
        else:
            y_last = Tensor(np.zeros((n, 1)))
        return x_last, y_last, Tensor(split.y_future)

    def forward(self, task: Task) -> Tensor:
        k = self.k
        x, y, yf = self._features(task.support)
        c, n, _ = x.shape
        # stage 1
        chan_emb = self.net("chan_out1")(
            mean(self.net("chan_in1")(x), axis=1))            # [C, K]
        past_emb = self.net("past_out1")(
            mean(self.net("past_in1")(y), axis=0))            # [K]
        fut_emb = self.net("fut_out1")(
            mean(self.net("fut_in1")(yf), axis=0))            # [K]
        # stage 2
        chan_ctx = broadcast_to(reshape(chan_emb, (c, 1, k)), (c, n, k))
        term_chan = mean(self.net("inst_chan")(concat((x, chan_ctx), axis=2)),
                         axis=0)
        term_past = self.net("inst_past")(
            concat((y, broadcast_to(past_emb, (n, k))), axis=1))
        term_fut = self.net("inst_fut")(
            concat((yf, broadcast_to(fut_emb, (n, k))), axis=1))
        u = self.net("inst_out")(add(add(term_chan, term_past), term_fut))
        # stage 3
        u_chan = broadcast_to(u, (c, n, k))
        chan_emb2 = self.net("chan_out2")(
            mean(self.net("chan_in2")(concat((x, u_chan), axis=2)), axis=1))
        past_emb2 = self.net("past_out2")(
            mean(self.net("past_in2")(concat((y, u), axis=1)), axis=0))
        fut_code = mean(self.net("fut_net2")(concat((yf, u), axis=1)), axis=0)
        # stage 4 on the query split
        xq, yq, _ = self._features(task.query)
        cq, nq, _ = xq.shape
        feats = concat((
            xq,
            broadcast_to(reshape(yq, (1, nq, 1)), (cq, nq, 1)),
            broadcast_to(reshape(chan_emb2, (cq, 1, k)), (cq, nq, k)),
            broadcast_to(past_emb2, (cq, nq, k)),
        ), axis=2)
        z = self.net("query_out")(mean(self.net("query_in")(feats), axis=0))
        return self.net("head")(
            concat((z, broadcast_to(fut_code, (nq, k))), axis=1))

    __call__ = forward

    def predict(self, task: Task) -> np.ndarray:
        with no_grad():
            return self.forward(task).data

    def loss(self, task: Task) -> Tensor:
        return meta_loss(self.forward(task), task.query.y_future)
