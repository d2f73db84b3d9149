"""Episodic forecasting tasks: support/query splits of one sampled problem."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TaskSplit:
    """One side of a task (support or query).

    x holds the predictor channels over the full window, time-concatenating
    the steps before and after the reference point, so its length is always
    the window length T.  y is the observed past target (T - p steps) and
    y_future the single forecast target at the final step.
    """

    x: np.ndarray        # [N, T, C_p]
    y: np.ndarray        # [N, L_y]
    y_future: np.ndarray  # [N, 1]

    @property
    def n_instances(self) -> int:
        return self.x.shape[0]


@dataclass
class Task:
    """One episodic forecasting problem sampled from a dataset."""

    support: TaskSplit
    query: TaskSplit
    horizon: int                 # p: gap between last observed target and forecast
    source_id: int = 0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_predictors(self) -> int:
        return self.support.x.shape[2]

    @property
    def length(self) -> int:
        return self.support.x.shape[1]

    @property
    def past_len(self) -> int:
        return self.support.y.shape[1]

    @property
    def t0(self) -> int:
        """Index of the first step after the observed target history."""
        return self.length - self.horizon

    @property
    def n_channels(self) -> int:
        """Sampled channel count including the target channel."""
        return self.n_predictors + 1

    def validate(self) -> None:
        t = self.length
        for name, split in (("support", self.support), ("query", self.query)):
            n = split.n_instances
            if split.x.shape[1] != t:
                raise ValueError(f"{name}.x window length {split.x.shape[1]} "
                                 f"!= {t}")
            if split.y.shape != (n, t - self.horizon):
                raise ValueError(f"{name}.y shape {split.y.shape} != "
                                 f"{(n, t - self.horizon)}")
            if split.y_future.shape != (n, 1):
                raise ValueError(f"{name}.y_future shape "
                                 f"{split.y_future.shape} != {(n, 1)}")
        if self.n_predictors < 1:
            raise ValueError("task needs at least one predictor channel")
        if not (0 <= self.horizon <= t):
            raise ValueError(f"horizon {self.horizon} outside window {t}")
