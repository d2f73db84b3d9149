"""Command-line surface.

Subcommands: generate, sample-tasks, train, evaluate, baseline, grid,
plot, gradcheck.  Any flag may instead come from a JSON config file
(``--config``) holding one section per subcommand, e.g.

    {"train": {"horizon": 10, "epochs": 200}, "generate": {"stores": 6}}

Explicit flags override file values.  Exit code 0 on success; failures
print a single ``error: <Type>: <message>`` line on stderr and exit 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, figures, gradcheck
from .checkpoint import load_model, save_model
from .data import (benchmark_specs, export_csv_dataset,
                   generate_synthetic_dataset, load_store_directory)
from .harness import (TrainConfig, evaluate_fixed, meta_train,
                      read_record_csv, run_channel_grid, run_variant_grid,
                      write_history_csv)
from .testset import build_fixed_test_set, read_tasks

EVAL_METHODS = (baselines.HEURISTICS + ("oracle",)
                + baselines.SINGLE_TASK_KINDS)


def _resolve(args, section: str, defaults: dict) -> dict:
    """Layer config-file values under explicit flags over defaults."""
    values = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        section_cfg = file_cfg.get(section, {})
        unknown = sorted(set(section_cfg) - set(defaults))
        if unknown:
            raise ValueError(f"config section {section!r}: unknown keys "
                             f"{unknown}")
        values.update(section_cfg)
    for key in defaults:
        given = getattr(args, key, None)
        if given is not None:
            values[key] = given
    return values


def _split_names(raw: str | None) -> list | None:
    if raw is None or raw == "":
        return None
    return [s.strip() for s in str(raw).split(",") if s.strip()]


def _pick_stores(stores: list, names: list | None, role: str) -> list:
    if names is None:
        raise ValueError(f"missing --{role} store names")
    by_name = {s.name: s for s in stores}
    missing = [n for n in names if n not in by_name]
    if missing:
        raise ValueError(f"--{role}: unknown stores {missing}; available: "
                         f"{sorted(by_name)}")
    return [by_name[n] for n in names]


def _clip_norm(value) -> float | None:
    if value in (None, "", "none", "off"):
        return None
    return float(value)


def _train_config(values: dict) -> TrainConfig:
    return TrainConfig(
        model=values["model"], horizon=int(values["horizon"]),
        variant=values["variant"], k_inf=int(values["k_inf"]),
        k_pred=int(values["k_pred"]),
        share_weights=bool(values["share_weights"]),
        epochs=int(values["epochs"]),
        meta_batches_per_epoch=int(values["meta_batches"]),
        patience=int(values["patience"]), lr=float(values["lr"]),
        clip_norm=_clip_norm(values["clip_norm"]), seed=int(values["seed"]),
        c_range=(int(values["c_min"]), int(values["c_max"])),
        length=int(values["length"]), n_support=int(values["n_support"]),
        n_query=int(values["n_query"]))


_TRAIN_DEFAULTS = dict(model="timehetnet", horizon=10, variant="gru-corner",
                       k_inf=32, k_pred=32, share_weights=True, epochs=15000,
                       meta_batches=10, patience=1500, lr=0.001,
                       clip_norm=1.0, seed=0, c_min=5, c_max=10, length=100,
                       n_support=20, n_query=20)


def _add_train_flags(sub) -> None:
    sub.add_argument("--model", choices=["timehetnet", "hetnet"])
    sub.add_argument("--horizon", type=int)
    sub.add_argument("--variant", choices=["gru-corner", "conv-corner",
                                           "all-gru", "all-conv"])
    sub.add_argument("--k-inf", type=int, dest="k_inf")
    sub.add_argument("--k-pred", type=int, dest="k_pred")
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--meta-batches", type=int, dest="meta_batches")
    sub.add_argument("--patience", type=int)
    sub.add_argument("--lr", type=float)
    sub.add_argument("--clip-norm", dest="clip_norm",
                     help="global-norm clip threshold, or 'none'")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--c-min", type=int, dest="c_min")
    sub.add_argument("--c-max", type=int, dest="c_max")
    sub.add_argument("--length", type=int)
    sub.add_argument("--n-support", type=int, dest="n_support")
    sub.add_argument("--n-query", type=int, dest="n_query")


# ---------------------------------------------------------------------------
# handlers

def _cmd_generate(args) -> int:
    values = _resolve(args, "generate", dict(
        stores=8, seed=0, samples=60, length=176, channels=12,
        distractors=2, lag_max=10))
    out = Path(args.out)
    specs = benchmark_specs(int(values["stores"]), seed=int(values["seed"]),
                            n_samples=int(values["samples"]),
                            length=int(values["length"]),
                            n_channels=int(values["channels"]),
                            n_distractors=int(values["distractors"]),
                            lag_range=(0, int(values["lag_max"])))
    for spec in specs:
        store = generate_synthetic_dataset(spec)
        export_csv_dataset(store, out / store.name)
        print(f"generated {store.name}: {len(store.samples)} samples x "
              f"[{store.samples[0].shape[0]}, {store.n_channels}]")
    return 0


def _cmd_sample_tasks(args) -> int:
    values = _resolve(args, "sample_tasks", dict(
        per_count=50, seed=0, horizon=10, c_min=5, c_max=10, length=100,
        n_support=20, n_query=20, names=None))
    stores = load_store_directory(args.stores)
    names = _split_names(values["names"])
    if names is not None:
        stores = _pick_stores(stores, names, "names")
    tasks, digest = build_fixed_test_set(
        stores, int(values["per_count"]), seed=int(values["seed"]),
        horizon=int(values["horizon"]), path=args.out,
        c_range=(int(values["c_min"]), int(values["c_max"])),
        length=int(values["length"]), n_support=int(values["n_support"]),
        n_query=int(values["n_query"]))
    print(f"wrote {len(tasks)} tasks to {args.out} "
          f"(digest {digest.hex()[:12]})")
    return 0


def _cmd_train(args) -> int:
    values = _resolve(args, "train", _TRAIN_DEFAULTS)
    config = _train_config(values)
    stores = load_store_directory(args.stores)
    train_stores = _pick_stores(stores, _split_names(args.train), "train")
    val_stores = _pick_stores(stores, _split_names(args.val), "val")
    on_epoch = None
    if args.progress:
        def on_epoch(row):
            print(f"epoch {row['epoch']}: train {row['train_loss']:.4f} "
                  f"val {row['val_loss']:.4f}", flush=True)
    result = meta_train(config, train_stores, val_stores, on_epoch=on_epoch)
    save_model(args.out, result.model, {
        "config_digest": config.digest(),
        "config": config.to_dict(),
        "best_val_loss": result.best_val_loss,
        "best_epoch": result.best_epoch,
        "stopped_epoch": result.stopped_epoch,
    })
    if args.log:
        write_history_csv(result.history, args.log)
    print(f"trained {config.model} ({config.variant}, p={config.horizon}): "
          f"best val {result.best_val_loss:.4f} at epoch "
          f"{result.best_epoch}/{result.stopped_epoch}, "
          f"saved to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    model, meta = load_model(args.checkpoint)
    if args.expect_digest and meta.get("config_digest") != args.expect_digest:
        raise ValueError(
            f"checkpoint config digest {meta.get('config_digest')!r} does "
            f"not match expected {args.expect_digest!r}")
    record = evaluate_fixed(model, args.testset)
    record.write_csv(args.out_csv)
    if args.summary:
        record.write_summary(args.summary)
    print(f"{record.method}: {len(record.scores)} tasks, "
          f"mse mean {record.aggregate():.4f} median {record.median():.4f}")
    return 0


def _cmd_baseline(args) -> int:
    values = _resolve(args, "baseline", dict(seed=0))
    record = evaluate_fixed(args.method, args.testset,
                            eval_seed=int(values["seed"]))
    record.write_csv(args.out_csv)
    if args.summary:
        record.write_summary(args.summary)
    print(f"{record.method}: {len(record.scores)} tasks, "
          f"mse mean {record.aggregate():.4f} median {record.median():.4f}")
    return 0


def _cmd_grid(args) -> int:
    values = _resolve(args, "grid", dict(
        **_TRAIN_DEFAULTS, tasks_per_count=5,
        train_counts="2,4,6,8,10", eval_counts="2,4,6,8,10"))
    base = _train_config(values)
    stores = load_store_directory(args.stores)
    train_stores = _pick_stores(stores, _split_names(args.train), "train")
    val_stores = _pick_stores(stores, _split_names(args.val), "val")
    test_stores = _pick_stores(stores, _split_names(args.test), "test")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoints"
    if args.type == "variants":
        records = run_variant_grid(
            base, train_stores, val_stores, test_stores,
            tasks_per_count=int(values["tasks_per_count"]),
            checkpoint_dir=ckpt_dir)
        with open(out_dir / "variants.csv", "w", encoding="utf-8") as fh:
            fh.write("variant,horizon,mse_mean,mse_median\n")
            for r in records:
                fh.write(f"{r.meta['variant']},{r.horizon},"
                         f"{r.aggregate()!r},{r.median()!r}\n")
    else:
        records = run_channel_grid(
            base, train_stores, val_stores, test_stores,
            train_channel_counts=[int(v) for v in
                                  str(values["train_counts"]).split(",")],
            eval_channel_counts=[int(v) for v in
                                 str(values["eval_counts"]).split(",")],
            tasks_per_count=int(values["tasks_per_count"]),
            checkpoint_dir=ckpt_dir)
    for i, record in enumerate(records):
        record.write_csv(out_dir / f"record_{i:03d}.csv")
    figures.emit_figures(records, out_dir)
    print(f"grid {args.type}: {len(records)} records in {out_dir}")
    return 0


def _cmd_plot(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if args.records:
        rows = []
        for rep, path in enumerate(_split_names(args.records)):
            record = read_record_csv(path)
            for c, mse in record.by_channel_count().items():
                rows.append({"channel_count": c, "repetition": rep,
                             "mse": mse})
        out = figures.channel_curve(rows, out_dir / "channel_curve.svg")
        if out:
            written.append(out)
    if args.heatmap_csv:
        cells = []
        with open(args.heatmap_csv, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            if header != ["train_channels", "eval_channels", "mse"]:
                raise ValueError(f"{args.heatmap_csv}: unexpected header")
            for line in fh:
                tr, ev, mse = line.strip().split(",")
                cells.append({"train_channels": int(tr),
                              "eval_channels": int(ev), "mse": float(mse)})
        out = figures.heatmap(cells, out_dir / "heatmap.svg")
        if out:
            written.append(out)
    if args.forecast_testset:
        tasks, _ = read_tasks(args.forecast_testset)
        task = tasks[int(args.forecast_index)]
        prediction = None
        if args.forecast_checkpoint:
            model, _ = load_model(args.forecast_checkpoint)
            prediction = float(model.predict(task)[0, 0])
        written.append(figures.forecast_overlay(
            task, out_dir / "forecast.svg", prediction=prediction))
    if not written:
        raise ValueError("plot: nothing to do (give --records, "
                         "--heatmap-csv, or --forecast-testset)")
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_gradcheck(args) -> int:
    values = _resolve(args, "gradcheck", dict(tolerance=1e-4, seed=0))
    ok = gradcheck.run_battery(tolerance=float(values["tolerance"]),
                               seed=int(values["seed"]))
    if not ok:
        raise RuntimeError("gradient checks failed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="timehetnet",
        description="few-shot forecasting across heterogeneous-channel "
                    "time-series tasks")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", help="JSON config file with one section "
                                        "per subcommand")

    p = sub.add_parser("generate", help="write synthetic dataset directories")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--stores", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--distractors", type=int)
    p.add_argument("--lag-max", type=int, dest="lag_max")
    p.set_defaults(handler=_cmd_generate)

    p = sub.add_parser("sample-tasks", help="build a fixed test-set file")
    common(p)
    p.add_argument("--stores", required=True,
                   help="directory of dataset directories")
    p.add_argument("--out", required=True)
    p.add_argument("--names", help="comma-separated store subset")
    p.add_argument("--per-count", type=int, dest="per_count")
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--c-min", type=int, dest="c_min")
    p.add_argument("--c-max", type=int, dest="c_max")
    p.add_argument("--length", type=int)
    p.add_argument("--n-support", type=int, dest="n_support")
    p.add_argument("--n-query", type=int, dest="n_query")
    p.set_defaults(handler=_cmd_sample_tasks)

    p = sub.add_parser("train", help="meta-train a model")
    common(p)
    p.add_argument("--stores", required=True)
    p.add_argument("--train", required=True,
                   help="comma-separated training store names")
    p.add_argument("--val", required=True,
                   help="comma-separated validation store names")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training history CSV")
    p.add_argument("--progress", action="store_true")
    _add_train_flags(p)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a test set")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--testset", required=True)
    p.add_argument("--out-csv", required=True, dest="out_csv")
    p.add_argument("--summary")
    p.add_argument("--expect-digest", dest="expect_digest")
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("baseline", help="score a baseline on a test set")
    common(p)
    p.add_argument("--method", required=True, choices=sorted(EVAL_METHODS))
    p.add_argument("--testset", required=True)
    p.add_argument("--out-csv", required=True, dest="out_csv")
    p.add_argument("--summary")
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=_cmd_baseline)

    p = sub.add_parser("grid", help="variant or channel-count experiment grid")
    common(p)
    p.add_argument("--type", required=True, choices=["variants", "channels"])
    p.add_argument("--stores", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.add_argument("--tasks-per-count", type=int, dest="tasks_per_count")
    p.add_argument("--train-counts", dest="train_counts")
    p.add_argument("--eval-counts", dest="eval_counts")
    _add_train_flags(p)
    p.set_defaults(handler=_cmd_grid)

    p = sub.add_parser("plot", help="emit SVG figures from records")
    common(p)
    p.add_argument("--records", help="comma-separated evaluation CSVs")
    p.add_argument("--heatmap-csv", dest="heatmap_csv")
    p.add_argument("--forecast-testset", dest="forecast_testset")
    p.add_argument("--forecast-index", dest="forecast_index", default=0)
    p.add_argument("--forecast-checkpoint", dest="forecast_checkpoint")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(handler=_cmd_plot)

    p = sub.add_parser("gradcheck", help="finite-difference gradient battery")
    common(p)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "handler", None):
        parser.print_help()
        return 2
    try:
        return args.handler(args)
    except Exception as exc:  # single-line machine-parsable failure
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
