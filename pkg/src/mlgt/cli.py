"""Command-line interface: ``mlgt {construct,train,evaluate,sweep,partition}``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage error.
Outputs are written to a scratch directory next to ``--out`` and moved into
place only when the command succeeds.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
import tempfile
import time

import numpy as np

from . import codec, pipeline
from .classifier import FORMAT_VERSION, TrainConfig
from .dataset_io import IndexingConfig, label_cooccurrence, load_dataset, subsample_split
from .gt_construct import correlation_metric, write_matrix_market
from .metrics import evaluate
from .partition import (build_label_graph, hierarchical_partition, partition_from_blocks,
                        permuted_cooccurrence_coords, read_partition, write_partition, write_permutation,
                        write_spy_csv)


class UsageError(Exception):
    pass


def _c_value(text: str):
    if text == "auto":
        return "auto"
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--c must be an integer or 'auto', got {text!r}") from None


def _float_list(text: str) -> list[float]:
    vals = [float(t) for t in text.replace(",", " ").split()]
    if not vals:
        raise argparse.ArgumentTypeError("empty value list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlgt", description="Multilabel classification by group testing.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        if data:
            p.add_argument("--data", help="training dataset (repository text format)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--labels-one-indexed", action="store_true")
        p.add_argument("--features-zero-indexed", action="store_true")

    def construction(p):
        p.add_argument("--kind", choices=pipeline.KINDS, default="nmf")
        p.add_argument("--m", type=int)
        p.add_argument("--c", type=_c_value)
        p.add_argument("--k", type=int, default=5)
        p.add_argument("--m1", type=int)
        p.add_argument("--sample-size", type=int, default=1000)

    def training(p):
        p.add_argument("--epochs", type=int, default=20)
        p.add_argument("--l2", type=float, default=1e-4)
        p.add_argument("--solver", choices=("sgd", "lbfgs"), default="sgd")

    p = sub.add_parser("construct", help="build a group testing matrix")
    common(p)
    construction(p)
    p.add_argument("--d", type=int, help="label count when no dataset is given")

    p = sub.add_parser("train", help="construct A and train the group classifiers")
    common(p)
    construction(p)
    training(p)
    p.add_argument("--partition", nargs="?", const="auto",
                   help="train per label block (He-NMFGT); optionally read blocks from a partition file")
    p.add_argument("--max-block", type=int, default=40000)
    p.add_argument("--blocks", type=int, help="pack leaves into this many blocks")

    p = sub.add_parser("evaluate", help="predict on a test set and write the evaluation report")
    common(p, data=False)
    p.add_argument("--model", required=True, help="model directory written by train")
    p.add_argument("--test", required=True)
    p.add_argument("--decoder", choices=codec.DECODERS, default="topk")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--oracle", action="store_true", help="use perfect margins 2z-1 instead of the classifiers")

    p = sub.add_parser("sweep", help="precision curves over m, c or the training fraction")
    common(p)
    construction(p)
    training(p)
    p.add_argument("--test", required=True)
    p.add_argument("--axis", choices=("m", "c", "fraction"), required=True)
    p.add_argument("--values", type=_float_list, required=True)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--decoder", choices=codec.DECODERS, default="topk")

    p = sub.add_parser("partition", help="label graph partition, permutation and spy-plot data")
    common(p)
    p.add_argument("--max-block", type=int, default=40000)
    p.add_argument("--blocks", type=int)
    return parser


# -- helpers -----------------------------------------------------------------

def _indexing(args) -> IndexingConfig:
    return IndexingConfig(labels_one_indexed=args.labels_one_indexed,
                          features_one_indexed=not args.features_zero_indexed)


def _load(args, path):
    return load_dataset(path, _indexing(args))


def _gt_config(args, m=None, c=None) -> pipeline.GTConfig:
    m = args.m if m is None else m
    c = args.c if c is None else c
    if args.kind in ("sp", "cw", "nmf") and m is None:
        raise UsageError(f"--m is required for --kind {args.kind}")
    if args.kind == "saffron" and args.m1 is None:
        raise UsageError("--m1 is required for --kind saffron")
    if args.kind == "cw" and c is None:
        raise UsageError("--c is required for --kind cw")
    return pipeline.GTConfig(kind=args.kind, m=m, c=c, k=args.k, m1=args.m1, sample_size=args.sample_size)


def _train_config(args) -> TrainConfig:
    return TrainConfig(l2=args.l2, epochs=args.epochs, solver=args.solver)


def _resolved(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("threads", "out")}


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=_plain)
        fh.write("\n")


def _plain(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def _artifact_meta(args, **extra) -> dict:
    return {"format_version": FORMAT_VERSION, "command": args.command, "config": _resolved(args), **extra}


# -- commands ----------------------------------------------------------------

def cmd_construct(args, out: str) -> None:
    ds = _load(args, args.data) if args.data else None
    if ds is None and args.d is None:
        raise UsageError("construct needs --data or --d")
    cfg = _gt_config(args)
    a, info = pipeline.build_matrix(cfg, pipeline.derive_seed(args.seed, pipeline.CONSTRUCT), ds, args.d)
    write_matrix_market(a, os.path.join(out, "A.mtx"))
    meta = _artifact_meta(args, m=a.m, d=a.d, resolved=info)
    if ds is not None:
        phi = correlation_metric(a, ds)
        meta["phi"] = phi
        print(f"phi_Y(A) = {phi:.6f}")
    _write_json(os.path.join(out, "meta.json"), meta)
    print(f"A: {a.m} x {a.d}, kind={a.kind}, c={info.get('c')}")


def cmd_train(args, out: str) -> None:
    if not args.data:
        raise UsageError("train needs --data")
    ds = _load(args, args.data)
    cfg = _gt_config(args)
    tcfg = _train_config(args)
    t0 = time.monotonic()
    if args.partition:
        hp = None
        if args.partition != "auto":
            blocks, sep = read_partition(args.partition)
            hp = partition_from_blocks(ds.d, blocks, sep)
        model = pipeline.fit_hierarchical(ds, cfg, tcfg, args.seed, args.max_block, args.blocks, hp, args.threads)
        timings = dict(model.meta["timings"])
        timings["blocks"] = [blk.meta["timings"] for blk in model.blocks]
    else:
        model = pipeline.fit(ds, cfg, tcfg, args.seed, args.threads)
        timings = dict(model.meta["timings"])
    timings["wall"] = time.monotonic() - t0
    pipeline.save(model, out, {"command": "train", "config": _resolved(args)})
    _write_json(os.path.join(out, "timings.json"), timings)
    if isinstance(model, pipeline.HierModel):
        print(f"trained {model.partition.n_blocks} blocks, sizes {model.partition.block_sizes}")
    else:
        print(f"trained {model.a.m} group classifiers ({model.a.kind}, c={model.meta['resolved'].get('c')})")


def cmd_evaluate(args, out: str) -> None:
    model = pipeline.load(args.model)
    test = _load(args, args.test)
    d = model.d if isinstance(model, pipeline.HierModel) else model.a.d
    if test.d != d:
        raise ValueError("dimension mismatch between model and test labels")
    t0 = time.monotonic()
    if isinstance(model, pipeline.HierModel):
        if args.oracle:
            raise UsageError("--oracle applies to single-block models")
        preds = pipeline.predict_hierarchical(model, test.features, args.decoder, args.k)
    elif args.oracle:
        preds = pipeline.decode_margins(model.a, pipeline.oracle_margins(model.a, test), args.decoder, args.k)
    else:
        preds = pipeline.predict(model, test.features, args.decoder, args.k)
    elapsed = time.monotonic() - t0
    report = evaluate(preds, test.labels)
    with open(os.path.join(out, "report.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(report.to_csv())
    _write_json(os.path.join(out, "report.meta.json"), _artifact_meta(args))
    _write_json(os.path.join(out, "timings.json"),
                {"predict_total": elapsed, "predict_per_instance": elapsed / max(test.n, 1), "n_test": test.n})
    for metric, k, value, _ in report.rows():
        print(f"{metric}{'' if k is None else k}: {value:.4f}")


def cmd_sweep(args, out: str) -> None:
    if not args.data:
        raise UsageError("sweep needs --data")
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    train_all = _load(args, args.data)
    test = _load(args, args.test)
    tcfg = _train_config(args)
    rows, times = [], []
    for vi, value in enumerate(args.values):
        m = int(value) if args.axis == "m" else None
        c = int(value) if args.axis == "c" else None
        frac = value if args.axis == "fraction" else args.fraction
        cfg = _gt_config(args, m, c)
        for trial in range(args.trials):
            s = pipeline.derive_seed(args.seed, pipeline.TRIAL, vi, trial)
            train = subsample_split(train_all, frac, s)
            t0 = time.monotonic()
            model = pipeline.fit(train, cfg, tcfg, s, args.threads)
            t1 = time.monotonic()
            preds = pipeline.predict(model, test.features, args.decoder, args.k)
            t2 = time.monotonic()
            rep = evaluate(preds, test.labels)
            axis_value = _fmt_axis(value)
            rows.append([axis_value, trial, *(f"{rep[('Pi@k', k)]:.10g}" for k in (1, 3, 5))])
            times.append([axis_value, trial, f"{t1 - t0:.6f}", f"{t2 - t1:.6f}"])
    with open(os.path.join(out, "sweep.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis_value", "trial", "Pi@1", "Pi@3", "Pi@5"])
        w.writerows(rows)
    with open(os.path.join(out, "sweep_timings.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis_value", "trial", "train_time", "test_time"])
        w.writerows(times)
    _write_json(os.path.join(out, "sweep.meta.json"), _artifact_meta(args))
    print(f"{len(rows)} sweep rows written")


def _fmt_axis(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:g}"


def cmd_partition(args, out: str) -> None:
    if not args.data:
        raise UsageError("partition needs --data")
    ds = _load(args, args.data)
    cooc = label_cooccurrence(ds)
    hp = hierarchical_partition(build_label_graph(cooc), args.max_block, n_blocks=args.blocks)
    write_partition(hp, os.path.join(out, "partition.txt"))
    write_permutation(hp.permutation, os.path.join(out, "permutation.txt"))
    write_spy_csv(permuted_cooccurrence_coords(cooc, hp.permutation), os.path.join(out, "spy.csv"))
    _write_json(os.path.join(out, "partition.meta.json"),
                _artifact_meta(args, block_sizes=hp.block_sizes, n_separator=len(hp.separators),
                               oversized_leaves=hp.oversized))
    print(f"{hp.n_blocks} blocks, sizes {hp.block_sizes}, |S|={len(hp.separators)}")


COMMANDS = {"construct": cmd_construct, "train": cmd_train, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep, "partition": cmd_partition}


def _publish(tmp: str, out: str) -> None:
    os.makedirs(out, exist_ok=True)
    for name in sorted(os.listdir(tmp)):
        dst = os.path.join(out, name)
        if os.path.isdir(dst):
            shutil.rmtree(dst)
        elif os.path.exists(dst):
            os.remove(dst)
        shutil.move(os.path.join(tmp, name), dst)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    out = os.path.abspath(args.out)
    parent = os.path.dirname(out)
    tmp = None
    try:
        os.makedirs(parent, exist_ok=True)
        tmp = tempfile.mkdtemp(prefix=".mlgt-", dir=parent)
        COMMANDS[args.command](args, tmp)
        _publish(tmp, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mlgt {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # reported, partial outputs dropped
        print(f"mlgt {args.command}: error: {exc}", file=sys.stderr)
        return 1
    finally:
        if tmp is not None and os.path.isdir(tmp):
            shutil.rmtree(tmp, ignore_errors=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
