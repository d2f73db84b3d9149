"""Meta-training loop, early stopping, fixed-set evaluation, and grids.

Each training epoch samples ``meta_batches_per_epoch`` meta-batches;
a meta-batch holds one freshly sampled task per training store and
funds exactly one optimizer update on the mean of the per-task query
MSEs.  After every epoch the model is scored on one sampled task per
validation store; the best weights are kept and restored when
``patience`` epochs pass without improvement.

Everything is a pure function of (config, seeds): task sampling uses
per-task generators derived from the master seed, store name and a
stream counter, so runs reproduce bit-identically on one machine.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines
from .checkpoint import load_model, save_model
from .data import DatasetStore, sample_task, task_rng
from .layers import Adam, clip_global_norm
from .model import HetNet, TimeHetNet, batch_loss, meta_loss
from .tasks import Task
from .tensor import backward, no_grad
from .testset import build_fixed_test_set, read_tasks


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, meta_batch: int, task_seeds: list):
        super().__init__(
            f"non-finite loss at epoch {epoch}, meta-batch {meta_batch}, "
            f"task seeds {task_seeds}")
        self.epoch = epoch
        self.meta_batch = meta_batch
        self.task_seeds = task_seeds


@dataclass
class TrainConfig:
    model: str = "timehetnet"          # or "hetnet"
    horizon: int = 10
    variant: str = "gru-corner"
    k_inf: int = 32
    k_pred: int = 32
    share_weights: bool = True
    epochs: int = 15000
    meta_batches_per_epoch: int = 10
    patience: int = 1500
    lr: float = 0.001
    clip_norm: float | None = 1.0
    seed: int = 0
    c_range: tuple = (5, 10)
    length: int = 100
    n_support: int = 20
    n_query: int = 20

    def __post_init__(self):
        if self.patience > self.epochs:
            raise ValueError(f"patience {self.patience} exceeds epoch cap "
                             f"{self.epochs}")
        if self.model not in ("timehetnet", "hetnet"):
            raise ValueError(f"unknown model {self.model!r}")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Desk-scale preset: synthetic stores, shorter budget."""
        base = dict(epochs=2000, patience=200)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["c_range"] = list(self.c_range)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def build_model(config: TrainConfig):
    if config.model == "hetnet":
        return HetNet(k=config.k_inf, share_weights=config.share_weights,
                      seed=config.seed)
    return TimeHetNet(variant=config.variant, k_inf=config.k_inf,
                      k_pred=config.k_pred,
                      share_weights=config.share_weights, seed=config.seed)


def _sample(config: TrainConfig, store: DatasetStore, stream: str,
            counter: int, source_id: int) -> Task:
    rng = task_rng(config.seed, f"{stream}:{store.name}", counter)
    return sample_task(store, rng, c_range=config.c_range,
                       length=config.length, n_support=config.n_support,
                       n_query=config.n_query, horizon=config.horizon,
                       source_id=source_id, seed=counter)


def task_mse(model, task: Task) -> float:
    pred = model.predict(task)
    return float(np.mean((pred - task.query.y_future) ** 2))


def validation_loss(model, val_stores: list, config: TrainConfig,
                    epoch: int) -> float:
    """Mean query MSE over one sampled task per validation store."""
    with no_grad():
        return float(np.mean([
            task_mse(model, _sample(config, store, "val", epoch, sid))
            for sid, store in enumerate(val_stores)]))


@dataclass
class TrainResult:
    model: object
    config: TrainConfig
    best_val_loss: float
    best_epoch: int
    stopped_epoch: int
    history: list          # per epoch: {"epoch", "train_loss", "val_loss"}
    wall_clock: float

    @property
    def evaluations(self) -> int:
        return len(self.history)


def meta_train(config: TrainConfig, train_stores: list, val_stores: list,
               val_loss_fn=None, on_epoch=None) -> TrainResult:
    """Train a model per the config; returns the best-validation weights.

    ``val_loss_fn(model, epoch) -> float`` replaces the validation
    measurement when given (used to script stopping scenarios in tests).
    """
    if not train_stores:
        raise ValueError("meta_train: empty training fold")
    started = time.perf_counter()
    model = build_model(config)
    params = list(model.named_parameters())
    optimizer = Adam(params, lr=config.lr)
    best_val = float("inf")
    best_epoch = 0
    best_state = {name: p.data.copy() for name, p in params}
    since_best = 0
    history = []
    counter = 0
    for epoch in range(1, config.epochs + 1):
        epoch_losses = []
        for batch in range(config.meta_batches_per_epoch):
            seeds = []
            losses = []
            for sid, store in enumerate(train_stores):
                task = _sample(config, store, "train", counter, sid)
                seeds.append(counter)
                counter += 1
                losses.append(model.loss(task))
            loss = batch_loss(losses)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, batch, seeds)
            epoch_losses.append(value)
            grads = backward(loss)
            if config.clip_norm is not None:
                grads = clip_global_norm(grads, config.clip_norm)
            optimizer.step(grads)
        if val_loss_fn is not None:
            val = float(val_loss_fn(model, epoch))
        else:
            val = validation_loss(model, val_stores, config, epoch)
        history.append({"epoch": epoch,
                        "train_loss": float(np.mean(epoch_losses)),
                        "val_loss": val})
        if on_epoch is not None:
            on_epoch(history[-1])
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_state = {name: p.data.copy() for name, p in params}
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    for name, p in params:
        p.data = best_state[name].copy()
    return TrainResult(model=model, config=config, best_val_loss=best_val,
                       best_epoch=best_epoch,
                       stopped_epoch=history[-1]["epoch"] if history else 0,
                       history=history,
                       wall_clock=time.perf_counter() - started)


def write_history_csv(history: list, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for row in history:
            fh.write(f"{row['epoch']},{row['train_loss']!r},"
                     f"{row['val_loss']!r}\n")


# ---------------------------------------------------------------------------
# fixed-set evaluation

@dataclass
class TaskScore:
    index: int
    source_id: int
    channel_count: int      # predictors + target
    horizon: int
    mse: float


@dataclass
class MetricsRecord:
    method: str
    horizon: int
    scores: list
    wall_clock: float = 0.0
    config_digest: str = ""
    meta: dict = field(default_factory=dict)

    def aggregate(self) -> float:
        return float(np.mean([s.mse for s in self.scores]))

    def median(self) -> float:
        return float(np.median([s.mse for s in self.scores]))

    def by_channel_count(self) -> dict:
        groups: dict[int, list] = {}
        for s in self.scores:
            groups.setdefault(s.channel_count, []).append(s.mse)
        return {c: float(np.mean(v)) for c, v in sorted(groups.items())}

    def by_source(self) -> dict:
        groups: dict[int, list] = {}
        for s in self.scores:
            groups.setdefault(s.source_id, []).append(s.mse)
        return {sid: float(np.mean(v)) for sid, v in sorted(groups.items())}

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("task_index,source_id,channel_count,horizon,method,mse\n")
            for s in self.scores:
                fh.write(f"{s.index},{s.source_id},{s.channel_count},"
                         f"{s.horizon},{self.method},{s.mse!r}\n")

    def write_summary(self, path, include_timing: bool = False) -> None:
        payload = {
            "method": self.method,
            "horizon": self.horizon,
            "tasks": len(self.scores),
            "mse_mean": self.aggregate(),
            "mse_median": self.median(),
            "by_channel_count": {str(k): v
                                 for k, v in self.by_channel_count().items()},
            "by_source": {str(k): v for k, v in self.by_source().items()},
            "config_digest": self.config_digest,
            "meta": self.meta,
        }
        if include_timing:
            payload["wall_clock_s"] = self.wall_clock
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)


def read_record_csv(path) -> MetricsRecord:
    """Rebuild a record from a per-task evaluation CSV."""
    scores = []
    method = ""
    horizon = 0
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        expected = ["task_index", "source_id", "channel_count", "horizon",
                    "method", "mse"]
        if header != expected:
            raise ValueError(f"{path}: unexpected header {header}")
        for line in fh:
            idx, sid, c, horizon_s, method, mse = line.strip().split(",")
            horizon = int(horizon_s)
            scores.append(TaskScore(index=int(idx), source_id=int(sid),
                                    channel_count=int(c), horizon=horizon,
                                    mse=float(mse)))
    return MetricsRecord(method=method, horizon=horizon, scores=scores)


def _predict_fn(method, eval_seed: int):
    """Resolve a method spec into (label, task -> prediction-or-score)."""
    if hasattr(method, "predict"):
        label = getattr(method, "kind", type(method).__name__)
        return label, lambda task, i: method.predict(task)
    if method == "oracle":
        return "oracle", lambda task, i: baselines.oracle_best_channel(task)
    if method in baselines.HEURISTICS:
        return method, lambda task, i: baselines.heuristic_prediction(method,
                                                                      task)
    if method in baselines.SINGLE_TASK_KINDS:
        def run(task, i):
            model = baselines.train_single_task(
                method, task, task_rng(eval_seed, f"single:{method}", i))
            return model.predict(task)
        return method, run
    raise ValueError(f"unknown evaluation method {method!r}")


def evaluate_fixed(method, tasks, eval_seed: int = 0,
                   config_digest: str = "", meta: dict | None = None
                   ) -> MetricsRecord:
    """Per-task query MSE of a model, heuristic tag, or single-task kind.

    ``tasks`` is a task list or a test-set file path.  Tasks are scored
    independently, in file order, so results do not depend on ordering.
    """
    if isinstance(tasks, (str, Path)):
        tasks, digest = read_tasks(tasks)
        if not config_digest:
            config_digest = digest.hex()
    label, run = _predict_fn(method, eval_seed)
    started = time.perf_counter()
    scores = []
    for i, task in enumerate(tasks):
        out = run(task, i)
        if isinstance(out, float):
            mse = out
        else:
            mse = float(np.mean((out - task.query.y_future) ** 2))
        scores.append(TaskScore(index=i, source_id=task.source_id,
                                channel_count=task.n_channels,
                                horizon=task.horizon, mse=mse))
    return MetricsRecord(method=label, horizon=tasks[0].horizon if tasks else 0,
                         scores=scores,
                         wall_clock=time.perf_counter() - started,
                         config_digest=config_digest, meta=dict(meta or {}))


# ---------------------------------------------------------------------------
# experiment grids

def _cached_train(config: TrainConfig, train_stores, val_stores,
                  checkpoint_dir=None):
    """Train once per config digest; later runs reload the checkpoint."""
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        path = checkpoint_dir / f"{config.digest()}.ckpt"
        if path.exists():
            model, _ = load_model(path)
            return model
    result = meta_train(config, train_stores, val_stores)
    if checkpoint_dir is not None:
        save_model(path, result.model,
                   {"config_digest": config.digest(),
                    "best_val_loss": result.best_val_loss,
                    "best_epoch": result.best_epoch})
    return result.model


def run_variant_grid(base: TrainConfig, train_stores, val_stores, test_stores,
                     tasks_per_count: int = 5, variants=None,
                     checkpoint_dir=None, eval_seed: int = 1000) -> list:
    """One record per architecture variant on a shared fixed test set."""
    from .model import VARIANTS

    variants = list(variants or VARIANTS)
    tasks, digest = build_fixed_test_set(
        test_stores, tasks_per_count, seed=eval_seed, horizon=base.horizon,
        c_range=base.c_range, length=base.length,
        n_support=base.n_support, n_query=base.n_query)
    records = []
    for variant in variants:
        config = base.replace(variant=variant)
        model = _cached_train(config, train_stores, val_stores,
                              checkpoint_dir)
        record = evaluate_fixed(model, tasks, config_digest=config.digest(),
                                meta={"variant": variant,
                                      "grid": "variants"})
        record.method = f"timehetnet/{variant}"
        records.append(record)
    return records


def run_channel_grid(base: TrainConfig, train_stores, val_stores, test_stores,
                     train_channel_counts=(2, 4, 6, 8, 10),
                     eval_channel_counts=(2, 4, 6, 8, 10),
                     tasks_per_count: int = 5, checkpoint_dir=None,
                     eval_seed: int = 2000) -> list:
    """Train on fixed channel counts, evaluate on fixed channel counts."""
    records = []
    eval_tasks = {}
    for c_eval in eval_channel_counts:
        eval_tasks[c_eval], _ = build_fixed_test_set(
            test_stores, tasks_per_count, seed=eval_seed,
            horizon=base.horizon, c_range=(c_eval, c_eval),
            length=base.length, n_support=base.n_support,
            n_query=base.n_query)
    for c_train in train_channel_counts:
        config = base.replace(c_range=(c_train, c_train))
        model = _cached_train(config, train_stores, val_stores,
                              checkpoint_dir)
        for c_eval in eval_channel_counts:
            record = evaluate_fixed(model, eval_tasks[c_eval],
                                    config_digest=config.digest(),
                                    meta={"grid": "channels",
                                          "train_channels": c_train,
                                          "eval_channels": c_eval})
            record.method = f"timehetnet/train_c{c_train}"
            records.append(record)
    return records
