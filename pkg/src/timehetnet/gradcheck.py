"""Gradient-check battery: every layer kind plus the full forecasting
network on a toy task, verified against central finite differences.

Parameters are nudged off their init before checking: zero biases meet
zero-padded inputs exactly at the relu kink, where a central difference
straddles the corner and disagrees with any one-sided convention.  The
nudge moves evaluation to a generic point without changing what is
being verified.
"""

from __future__ import annotations

import numpy as np

from .layers import Conv1DLayer, DenseLayer, GRULayer, make_stack
from .model import VARIANTS, HetNet, TimeHetNet
from .tasks import Task, TaskSplit
from .tensor import Tensor, grad_check, mean, square


def make_toy_task(n: int = 2, t: int = 8, c_p: int = 2, horizon: int = 3,
                  n_query: int = 2, seed: int = 0) -> Task:
    rng = np.random.default_rng(seed)

    def split(k):
        return TaskSplit(x=rng.standard_normal((k, t, c_p)),
                         y=rng.standard_normal((k, t - horizon)),
                         y_future=rng.standard_normal((k, 1)))

    return Task(support=split(n), query=split(n_query), horizon=horizon)


def _jitter(params, seed: int = 7, scale: float = 0.05):
    rng = np.random.default_rng(seed)
    for p in params:
        p.data = p.data + rng.uniform(-scale, scale, size=p.data.shape)


def _sum_sq(module, x):
    return lambda: mean(square(module(x)))


def layer_checks(seed: int = 0, eps: float = 1e-6) -> list:
    """(name, max relative error) for each layer type and stack kind."""
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((3, 7, 4)))
    results = []
    for name, layer in (
            ("dense-relu", DenseLayer.create(rng, 4, 5, "relu")),
            ("dense-tanh", DenseLayer.create(rng, 4, 5, "tanh")),
            ("dense-linear", DenseLayer.create(rng, 4, 5, "linear")),
            ("conv1d", Conv1DLayer.create(rng, 4, 5)),
            ("gru", GRULayer.create(rng, 4, 5)),
            ("gru-last-step", GRULayer.create(rng, 4, 5,
                                              output_mode="last-step"))):
        params = [p for _, p in layer.named_parameters()]
        _jitter(params, seed=seed + 1)
        results.append((name, grad_check(_sum_sq(layer, x), params, eps=eps)))
    for kind in ("dense", "conv", "gru"):
        stack = make_stack(kind, rng, 4, 5)
        params = [p for _, p in stack.named_parameters()]
        _jitter(params, seed=seed + 2)
        results.append((f"stack-{kind}",
                        grad_check(_sum_sq(stack, x), params, eps=eps)))
    return results


def model_checks(variants=None, k: int = 4, seed: int = 0,
                 eps: float = 1e-5, max_coords: int = 3) -> list:
    """(name, max relative error) for full models on a toy task."""
    task = make_toy_task(seed=seed)
    results = []
    for variant in (variants if variants is not None else VARIANTS):
        model = TimeHetNet(variant=variant, k_inf=k, k_pred=k, seed=seed + 1)
        params = [p for _, p in model.named_parameters()]
        _jitter(params, seed=seed + 3)
        err = grad_check(lambda: model.loss(task), params, eps=eps,
                         max_coords=max_coords)
        results.append((f"timehetnet/{variant}", err))
    hetnet = HetNet(k=k, seed=seed + 2)
    params = [p for _, p in hetnet.named_parameters()]
    _jitter(params, seed=seed + 4)
    results.append(("hetnet", grad_check(lambda: hetnet.loss(task), params,
                                         eps=eps, max_coords=max_coords)))
    return results


def run_battery(tolerance: float = 1e-4, seed: int = 0,
                report=print) -> bool:
    """Run every check, report one line each; True when all pass."""
    ok = True
    for name, err in layer_checks(seed=seed) + model_checks(seed=seed):
        passed = err < tolerance
        ok = ok and passed
        report(f"gradcheck {name}: max-rel-err {err:.3e} "
               f"[{'pass' if passed else 'FAIL'}]")
    return ok
