"""Dataset stores, synthetic meta-datasets, and the episodic task sampler.

A store holds multivariate series samples with fixed channel semantics.
Tasks are sampled by drawing a channel subset (one becomes the target),
a window of fixed length per instance, and normalizing every selected
channel per instance over the full window before the last ``horizon``
target steps are hidden.

Synthetic stores are built from a latent signal per sample: one channel
observes the latent directly, covariate channels observe scaled copies
shifted ``lag`` steps into the future (an upstream sensor that leads
the target), and distractor channels are pure noise.  Knowing the right
covariate channel therefore pays off, which gives the channel oracle
and the meta-learners something real to find.
"""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tasks import Task, TaskSplit

FAMILY_KINDS = ("sinusoid-mixture", "ar-process", "trend-plus-seasonal")


@dataclass
class DatasetStore:
    """A named collection of multivariate series samples [T_i, C]."""

    name: str
    samples: list
    channel_names: list
    provenance: str = "ingested"  # or "synthetic"

    @property
    def n_channels(self) -> int:
        return self.samples[0].shape[1]

    def validate(self, c_max: int = 10, window: int = 100,
                 n_instances: int = 40) -> None:
        if not self.samples:
            raise ValueError(f"store {self.name}: no samples")
        c = self.n_channels
        if len(self.channel_names) != c:
            raise ValueError(f"store {self.name}: {len(self.channel_names)} "
                             f"channel names for {c} channels")
        if c < c_max:
            raise ValueError(f"store {self.name}: {c} channels cannot serve "
                             f"tasks of up to {c_max}")
        for i, s in enumerate(self.samples):
            if s.ndim != 2 or s.shape[1] != c:
                raise ValueError(f"store {self.name}: sample {i} has shape "
                                 f"{s.shape}, expected [T, {c}]")
            if not np.isfinite(s).all():
                raise ValueError(f"store {self.name}: sample {i} contains "
                                 f"non-finite values")
        if len(self.samples) == 1:
            if self.samples[0].shape[0] - window + 1 < n_instances:
                raise ValueError(
                    f"store {self.name}: single series too short to slice "
                    f"{n_instances} windows of {window}")
        else:
            short = [i for i, s in enumerate(self.samples)
                     if s.shape[0] < window]
            if short:
                raise ValueError(f"store {self.name}: samples {short[:3]} "
                                 f"shorter than the task window {window}")


@dataclass
class SyntheticFamilySpec:
    """Parametric generator standing in for one source dataset."""

    kind: str = "sinusoid-mixture"
    name: str = ""
    n_samples: int = 60
    length: int = 160
    n_channels: int = 12
    n_distractors: int = 2
    lag_range: tuple = (0, 20)
    scale_range: tuple = (0.5, 2.0)
    noise_std_range: tuple = (0.05, 0.2)
    # sinusoid-mixture / seasonal component
    n_components: tuple = (2, 3)
    period_range: tuple = (12, 60)
    # ar-process
    ar_order: int = 2
    # trend-plus-seasonal
    slope_range: tuple = (-0.004, 0.004)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}, expected "
                             f"one of {FAMILY_KINDS}")
        if self.n_channels - self.n_distractors < 2:
            raise ValueError("need at least a target and one covariate "
                             "channel besides the distractors")
        if not self.name:
            self.name = f"{self.kind}-{self.seed}"


def _stable_ar_coeffs(rng: np.random.Generator, order: int) -> np.ndarray:
    """Draw AR coefficients, rejecting until the process is stationary."""
    while True:
        coeffs = rng.uniform(-0.8, 0.9, size=order)
        companion = np.zeros((order, order))
        companion[0] = coeffs
        if order > 1:
            companion[1:, :-1] = np.eye(order - 1)
        if np.abs(np.linalg.eigvals(companion)).max() < 0.95:
            return coeffs


def simulate_ar(coeffs, n: int, rng: np.random.Generator,
                noise_std: float = 1.0, burn_in: int = 100) -> np.ndarray:
    """Simulate an AR(p) series of length n after a burn-in."""
    order = len(coeffs)
    total = n + burn_in
    eps = rng.standard_normal(total) * noise_std
    sig = np.zeros(total)
    for t in range(total):
        acc = eps[t]
        for i, c in enumerate(coeffs):
            if t - 1 - i >= 0:
                acc += c * sig[t - 1 - i]
        sig[t] = acc
    return sig[burn_in:]


def _latent_signal(spec: SyntheticFamilySpec, store_params: dict,
                   rng: np.random.Generator, n: int) -> np.ndarray:
    if spec.kind == "ar-process":
        return simulate_ar(store_params["ar_coeffs"], n, rng)
    t = np.arange(n, dtype=np.float64)
    sig = np.zeros(n)
    for period, amp in zip(store_params["periods"], store_params["amps"]):
        sig += amp * np.sin(2.0 * np.pi * t / period
                            + rng.uniform(0.0, 2.0 * np.pi))
    if spec.kind == "trend-plus-seasonal":
        sig += store_params["slope"] * (t - n / 2.0)
    return sig


def generate_synthetic_dataset(spec: SyntheticFamilySpec,
                               rng: np.random.Generator | None = None
                               ) -> DatasetStore:
    """Deterministic store construction from a family spec and its seed."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    lag_lo, lag_hi = spec.lag_range
    n_cov = spec.n_channels - spec.n_distractors - 1
    # channel semantics are drawn once per store and fixed across samples
    lags = rng.integers(lag_lo, lag_hi + 1, size=n_cov)
    scales = rng.uniform(*spec.scale_range, size=n_cov)
    noise = rng.uniform(*spec.noise_std_range, size=n_cov)
    target_noise = rng.uniform(*spec.noise_std_range)
    store_params: dict = {}
    if spec.kind == "ar-process":
        store_params["ar_coeffs"] = _stable_ar_coeffs(rng, spec.ar_order)
    else:
        k = rng.integers(spec.n_components[0], spec.n_components[1] + 1)
        store_params["periods"] = rng.uniform(*spec.period_range, size=k)
        store_params["amps"] = rng.uniform(0.5, 1.0, size=k)
        if spec.kind == "trend-plus-seasonal":
            store_params["slope"] = rng.uniform(*spec.slope_range)

    lag_max = int(lags.max()) if n_cov else 0
    samples = []
    for _ in range(spec.n_samples):
        latent = _latent_signal(spec, store_params, rng,
                                spec.length + lag_max)
        latent = (latent - latent.mean()) / max(latent.std(), 1e-8)
        chans = np.empty((spec.length, spec.n_channels))
        chans[:, 0] = (latent[:spec.length]
                       + target_noise * rng.standard_normal(spec.length))
        for j in range(n_cov):
            shifted = latent[lags[j]:lags[j] + spec.length]
            chans[:, 1 + j] = (scales[j] * shifted
                               + noise[j] * rng.standard_normal(spec.length))
        for j in range(spec.n_distractors):
            chans[:, 1 + n_cov + j] = rng.standard_normal(spec.length)
        samples.append(chans)

    names = (["target_ref"]
             + [f"cov{j}_lag{lags[j]}" for j in range(n_cov)]
             + [f"distractor{j}" for j in range(spec.n_distractors)])
    store = DatasetStore(name=spec.name, samples=samples,
                         channel_names=names, provenance="synthetic")
    if n_cov and best_lagged_correlation(store) <= 0.5:
        raise ValueError(f"store {spec.name}: no covariate correlates > 0.5 "
                         f"with the target at any lag")
    return store


def best_lagged_correlation(store: DatasetStore, max_lag: int = 25) -> float:
    """Max |corr(cov_t, target_{t+lag})| over covariates and |lag| <= max_lag."""
    sample = store.samples[0]
    target = sample[:, 0]
    best = 0.0
    for j in range(1, sample.shape[1]):
        cov = sample[:, j]
        for lag in range(-max_lag, max_lag + 1):
            if lag >= 0:
                a, b = cov[:len(cov) - lag], target[lag:]
            else:
                a, b = cov[-lag:], target[:len(target) + lag]
            if len(a) < 10:
                continue
            sa, sb = a.std(), b.std()
            if sa < 1e-12 or sb < 1e-12:
                continue
            r = np.corrcoef(a, b)[0, 1]
            best = max(best, abs(float(r)))
    return best


def normalize_channel(series: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-std rescaling with a floor for constant channels."""
    series = np.asarray(series, dtype=np.float64)
    return (series - series.mean()) / max(float(series.std()), 1e-8)


def task_rng(master_seed: int, store_name: str, index: int
             ) -> np.random.Generator:
    """Independent per-task generator, stable across processes."""
    name_key = zlib.crc32(store_name.encode("utf-8"))
    return np.random.default_rng(
        np.random.SeedSequence((master_seed, name_key, index)))


def sample_task(store: DatasetStore, rng: np.random.Generator,
                c_range: tuple = (5, 10), length: int = 100,
                n_support: int = 20, n_query: int = 20, horizon: int = 10,
                source_id: int = 0, seed: int = 0) -> Task:
    """Draw one episodic forecasting task from a store.

    A channel count is drawn uniformly from ``c_range``; one of the
    sampled channels becomes the target (never duplicated among the
    predictors).  Every selected channel is normalized per instance over
    the full window, then the last ``horizon`` target steps are hidden:
    y covers the first length - horizon steps and the future target is
    the value at the final step.
    """
    if not 1 <= horizon <= length:
        raise ValueError(f"horizon {horizon} outside window {length}")
    c_lo, c_hi = c_range
    if c_hi > store.n_channels:
        raise ValueError(f"store {store.name}: cannot sample {c_hi} of "
                         f"{store.n_channels} channels")
    c = int(rng.integers(c_lo, c_hi + 1))
    channels = rng.choice(store.n_channels, size=c, replace=False)
    target_ch, predictor_chs = int(channels[0]), channels[1:]

    n_total = n_support + n_query
    if len(store.samples) == 1:
        series = store.samples[0]
        max_start = series.shape[0] - length
        if max_start + 1 < n_total:
            raise ValueError(f"store {store.name}: only {max_start + 1} "
                             f"window offsets for {n_total} instances")
        starts = rng.choice(max_start + 1, size=n_total, replace=False)
        windows = [series[s:s + length] for s in starts]
    else:
        if len(store.samples) < n_total:
            raise ValueError(f"store {store.name}: {len(store.samples)} "
                             f"samples < {n_total} instances per task")
        picks = rng.choice(len(store.samples), size=n_total, replace=False)
        windows = []
        for p in picks:
            s = store.samples[p]
            start = int(rng.integers(0, s.shape[0] - length + 1))
            windows.append(s[start:start + length])

    x = np.empty((n_total, length, c - 1))
    target = np.empty((n_total, length))
    for i, w in enumerate(windows):
        for j, ch in enumerate(predictor_chs):
            x[i, :, j] = normalize_channel(w[:, ch])
        target[i] = normalize_channel(w[:, target_ch])

    y = target[:, :length - horizon]
    y_future = target[:, length - 1:length]

    def split(sl):
        return TaskSplit(x=np.ascontiguousarray(x[sl]),
                         y=np.ascontiguousarray(y[sl]),
                         y_future=np.ascontiguousarray(y_future[sl]))

    task = Task(support=split(slice(0, n_support)),
                query=split(slice(n_support, n_total)),
                horizon=horizon, source_id=source_id, seed=seed,
                meta={"store": store.name, "target_channel": target_ch,
                      "channels": [int(ch) for ch in channels]})
    task.validate()
    return task


@dataclass
class FoldSpec:
    """One rotation of the dataset ids into train/validation/test."""

    index: int
    train_ids: list
    val_ids: list
    test_ids: list

    def __post_init__(self):
        overlap = (set(self.train_ids) & set(self.val_ids)
                   | set(self.train_ids) & set(self.test_ids)
                   | set(self.val_ids) & set(self.test_ids))
        if overlap:
            raise ValueError(f"fold {self.index}: overlapping ids {overlap}")


def make_folds(ids, k: int = 5, sizes: tuple = (24, 8, 8),
               seed: int = 0) -> list:
    """Rotating disjoint test chunks covering every id exactly once."""
    n_train, n_val, n_test = sizes
    ids = list(ids)
    if len(ids) != n_train + n_val + n_test:
        raise ValueError(f"{len(ids)} ids != train+val+test = "
                         f"{n_train + n_val + n_test}")
    if k * n_test != len(ids):
        raise ValueError(f"k*test = {k * n_test} must equal id count "
                         f"{len(ids)} for a full rotation")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    folds = []
    for f in range(k):
        start = f * n_test
        test = order[start:start + n_test]
        rest = order[start + n_test:] + order[:start]
        folds.append(FoldSpec(index=f, train_ids=rest[n_val:],
                              val_ids=rest[:n_val], test_ids=test))
    return folds


# ---------------------------------------------------------------------------
# dataset directory format: dataset.json + sample_<k>.csv

def export_csv_dataset(store: DatasetStore, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "name": store.name,
        "samples": len(store.samples),
        "channels": store.n_channels,
        "channel_names": list(store.channel_names),
        "time_steps": [int(s.shape[0]) for s in store.samples],
        "provenance": store.provenance,
    }
    with open(directory / "dataset.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    for k, sample in enumerate(store.samples):
        with open(directory / f"sample_{k}.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(store.channel_names)
            for row in sample:
                writer.writerow([repr(float(v)) for v in row])


def ingest_csv_dataset(directory) -> DatasetStore:
    """Parse and validate a dataset directory."""
    directory = Path(directory)
    meta_path = directory / "dataset.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{meta_path}: dataset metadata not found")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    n_channels = int(meta["channels"])
    names = list(meta["channel_names"])
    if len(names) != n_channels:
        raise ValueError(f"{meta_path}: {len(names)} channel names for "
                         f"{n_channels} channels")
    steps = list(meta["time_steps"])
    n_samples = int(meta["samples"])
    if len(steps) != n_samples:
        raise ValueError(f"{meta_path}: time_steps lists {len(steps)} "
                         f"samples, metadata says {n_samples}")
    samples = []
    for k in range(n_samples):
        path = directory / f"sample_{k}.csv"
        if not path.exists():
            raise FileNotFoundError(f"{path}: sample file missing")
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or len(header) != n_channels:
                raise ValueError(f"{path}: header does not list "
                                 f"{n_channels} channels")
            for line_no, row in enumerate(reader, start=2):
                if len(row) != n_channels:
                    raise ValueError(f"{path}: line {line_no}: {len(row)} "
                                     f"cells, expected {n_channels}")
                try:
                    rows.append([float(v) for v in row])
                except ValueError as exc:
                    raise ValueError(f"{path}: line {line_no}: "
                                     f"non-numeric cell") from exc
        if len(rows) != steps[k]:
            raise ValueError(f"{path}: {len(rows)} rows, metadata says "
                             f"{steps[k]}")
        samples.append(np.asarray(rows, dtype=np.float64))
    return DatasetStore(name=str(meta["name"]), samples=samples,
                        channel_names=names,
                        provenance=str(meta.get("provenance", "ingested")))


# ---------------------------------------------------------------------------
# the desk-scale synthetic meta-dataset

def benchmark_specs(n_stores: int, seed: int = 0, n_samples: int = 60,
                    length: int = 176, n_channels: int = 12,
                    n_distractors: int = 2,
                    lag_range: tuple = (0, 6)) -> list:
    """Family specs for the informative-covariate benchmark.

    Kinds rotate through the three families; lags stay moderate so both
    recurrent and convolutional variants can bridge them.
    """
    specs = []
    for i in range(n_stores):
        kind = FAMILY_KINDS[i % len(FAMILY_KINDS)]
        specs.append(SyntheticFamilySpec(
            kind=kind, name=f"synth-{i:02d}-{kind}", n_samples=n_samples,
            length=length, n_channels=n_channels,
            n_distractors=n_distractors, lag_range=lag_range,
            period_range=(8, 40), noise_std_range=(0.05, 0.15),
            seed=seed * 1000 + i))
    return specs


def benchmark_stores(n_stores: int, seed: int = 0, **kwargs) -> list:
    return [generate_synthetic_dataset(spec)
            for spec in benchmark_specs(n_stores, seed, **kwargs)]


def load_store_directory(parent) -> list:
    """Ingest every dataset directory under ``parent``, sorted by name."""
    parent = Path(parent)
    dirs = sorted(p for p in parent.iterdir()
                  if p.is_dir() and (p / "dataset.json").exists())
    if not dirs:
        raise FileNotFoundError(f"{parent}: no dataset directories found")
    return [ingest_csv_dataset(d) for d in dirs]
