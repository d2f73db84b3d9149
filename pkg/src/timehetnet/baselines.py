"""Heuristic predictors, the channel oracle, and single-task models.

Heuristics are pure functions of the task.  Single-task models train on
one task's support split only (no information crosses tasks), giving
the per-task reference points the meta-learners are compared against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Adam, Conv1DLayer, DenseLayer, GRULayer, StackedBlock
from .model import meta_loss
from .tasks import Task, TaskSplit
from .tensor import Tensor, backward, mean, no_grad, reshape, slice_axis

SINGLE_TASK_KINDS = ("gru-stack", "fcn", "ff-last-step")
HEURISTICS = ("zero", "last-step", "avg-step")


class NotApplicableError(ValueError):
    """The method is undefined for this horizon (no past target exists)."""


def zero_prediction(task: Task) -> np.ndarray:
    """Constant zero, the calibration point for normalized targets."""
    return np.zeros((task.query.n_instances, 1))


def last_time_step(task: Task) -> np.ndarray:
    """Copy the last observed target value per query instance."""
    if task.query.y.shape[1] == 0:
        raise NotApplicableError(
            "last-step prediction undefined: horizon leaves no observed "
            "target steps")
    return task.query.y[:, -1:].copy()


def avg_time_step(task: Task) -> np.ndarray:
    """Mean of the final predictor values per query instance."""
    return task.query.x[:, -1, :].mean(axis=1, keepdims=True)


def oracle_best_channel(task: Task) -> float:
    """Score (not a predictor): mean over query instances of the squared
    error of the closest covariate's final value."""
    last = task.query.x[:, -1, :]                      # [N_q, C_p]
    err = (task.query.y_future - last) ** 2
    return float(err.min(axis=1).mean())


def heuristic_prediction(method: str, task: Task) -> np.ndarray:
    if method == "zero":
        return zero_prediction(task)
    if method == "last-step":
        return last_time_step(task)
    if method == "avg-step":
        return avg_time_step(task)
    raise ValueError(f"unknown heuristic {method!r}")


# ---------------------------------------------------------------------------
# single-task models

def _instance_input(split: TaskSplit) -> np.ndarray:
    """Stack predictors and the zero-padded past target as channels.

    With no past target (horizon == window) the input is predictors only.
    """
    n, t, _ = split.x.shape
    if split.y.shape[1] == 0:
        return split.x
    padded = np.zeros((n, t, 1))
    padded[:, :split.y.shape[1], 0] = split.y
    return np.concatenate([split.x, padded], axis=2)


def _last_values(split: TaskSplit) -> np.ndarray:
    """Final observed value of every channel as a flat feature vector."""
    feats = [split.x[:, -1, :]]
    if split.y.shape[1] > 0:
        feats.append(split.y[:, -1:])
    return np.concatenate(feats, axis=1)


@dataclass
class SingleTaskModel:
    kind: str
    blocks: list
    head: DenseLayer
    epochs: int
    lr: float

    def named_parameters(self):
        for i, block in enumerate(self.blocks):
            for name, p in block.named_parameters():
                yield f"block{i}/{name}", p
        for name, p in self.head.named_parameters():
            yield f"head/{name}", p

    def _forward(self, feats: np.ndarray) -> Tensor:
        h = Tensor(feats)
        for block in self.blocks:
            h = block(h)
        if self.kind == "gru-stack":
            t = h.shape[-2]
            h = reshape(slice_axis(h, -2, t - 1, t), h.shape[:-2] + (h.shape[-1],))
        elif self.kind == "fcn":
            h = mean(h, axis=-2)  # global average pooling over time
        return self.head(h)

    def predict(self, task: Task) -> np.ndarray:
        feats = (_last_values(task.query) if self.kind == "ff-last-step"
                 else _instance_input(task.query))
        with no_grad():
            return self._forward(feats).data


def _build_single_task(kind: str, in_channels: int,
                       rng: np.random.Generator) -> tuple[list, DenseLayer]:
    if kind == "gru-stack":
        blocks = [StackedBlock([GRULayer.create(rng, in_channels, 32),
                                GRULayer.create(rng, 32, 32),
                                GRULayer.create(rng, 32, 32)])]
        head = DenseLayer.create(rng, 32, 1, "linear")
    elif kind == "fcn":
        # convolution widths 128/256/128 with kernels 8/5/3, relu, then
        # global average pooling; normalization layers are omitted
        blocks = [StackedBlock([Conv1DLayer.create(rng, in_channels, 128, 8),
                                Conv1DLayer.create(rng, 128, 256, 5),
                                Conv1DLayer.create(rng, 256, 128, 3)])]
        head = DenseLayer.create(rng, 128, 1, "linear")
    elif kind == "ff-last-step":
        blocks = [StackedBlock([DenseLayer.create(rng, in_channels, 32),
                                DenseLayer.create(rng, 32, 32),
                                DenseLayer.create(rng, 32, 32, "linear")])]
        head = DenseLayer.create(rng, 32, 1, "linear")
    else:
        raise ValueError(f"unknown single-task kind {kind!r}")
    return blocks, head


def train_single_task(kind: str, task: Task, rng: np.random.Generator,
                      epochs: int = 500, lr: float = 0.001
                      ) -> SingleTaskModel:
    """Fit one model to the support split with full-batch Adam on MSE."""
    if task.support.n_instances == 0:
        raise ValueError("single-task training needs a non-empty support split")
    feats = (_last_values(task.support) if kind == "ff-last-step"
             else _instance_input(task.support))
    blocks, head = _build_single_task(kind, feats.shape[-1], rng)
    model = SingleTaskModel(kind=kind, blocks=blocks, head=head,
                            epochs=epochs, lr=lr)
    optimizer = Adam(list(model.named_parameters()), lr=lr)
    target = task.support.y_future
    for _ in range(epochs):
        loss = meta_loss(model._forward(feats), target)
        optimizer.step(backward(loss))
    return model


def predict_single_task(model: SingleTaskModel, task: Task) -> np.ndarray:
    return model.predict(task)
