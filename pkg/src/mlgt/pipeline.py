"""End-to-end MLGT: build A, train the group classifiers, decode, and the
hierarchical (per label block) variant."""
from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import codec, gt_construct, symnmf
from .classifier import ClassifierEnsemble, TrainConfig, load_model, predict_margins, save_model, train_ensemble
from .dataset_io import Dataset, label_cooccurrence
from .gt_construct import GroupTestingMatrix
from .partition import (BlockPrediction, HierPartition, build_label_graph, combine_predictions,
                        hierarchical_partition, partition_from_blocks, read_partition, write_partition,
                        write_permutation)

KINDS = ("sp", "cw", "saffron", "nmf", "identity")
# stream tags for derived seeds
CONSTRUCT, TRAIN, NMF, SWEEP, BLOCK, TRIAL = range(6)


def derive_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


@dataclass(frozen=True)
class GTConfig:
    kind: str = "nmf"
    m: int | None = None
    c: int | str | None = None  # "auto" runs the column-weight sweep
    k: int = 5
    m1: int | None = None
    c_candidates: tuple = (2, 3, 4, 5, 6, 8)
    sample_size: int = 1000
    nmf_sweeps: int = 100
    nmf_tol: float = 1e-4
    decoder: str = "linear"  # decoder used by the column-weight sweep

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown construction kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("sp", "cw", "nmf") and self.m is None:
            raise ValueError(f"kind {self.kind!r} needs m")
        if self.kind == "saffron" and self.m1 is None:
            raise ValueError("kind 'saffron' needs m1")
        if self.k < 1:
            raise ValueError("k must be >= 1")


def build_matrix(cfg: GTConfig, seed: int, ds: Dataset | None = None, d: int | None = None,
                 basis=None) -> tuple[GroupTestingMatrix, dict]:
    """Construct A for ``cfg``; returns the matrix and what was resolved (c, seeds)."""
    if ds is not None:
        d = ds.d
    if d is None:
        raise ValueError("need a dataset or d")
    info: dict = {"construct_seed": seed}
    kind = cfg.kind
    if kind == "identity":
        return gt_construct.identity(d), info
    if kind == "sp":
        return gt_construct.build_sp_gt(cfg.m, d, cfg.k, seed), info
    if kind == "nmf" and ds is None:
        raise ValueError("NMF construction needs a dataset")

    if kind == "nmf" and basis is None:
        nmf_seed = derive_seed(seed, NMF)
        basis = symnmf.symnmf_cd(label_cooccurrence(ds), cfg.m, cfg.nmf_sweeps, cfg.nmf_tol, nmf_seed)
        info["nmf_seed"] = nmf_seed
    if kind == "nmf":
        info["nmf_sweeps_run"] = len(basis.objective_trace) - 1

    def builder(c, s):
        if kind == "cw":
            return gt_construct.build_cw_for_m(d, cfg.m, int(c), s)
        if kind == "saffron":
            return gt_construct.build_saffron(d, cfg.m1, int(c), s, strict=False)
        return gt_construct.build_nmf_gt(ds, cfg.m, c, s, basis=basis)

    c = cfg.c
    if c is None:
        c = "auto" if kind == "nmf" else 6 if kind == "saffron" else None
        if c is None:
            raise ValueError(f"kind {kind!r} needs c")
    if c == "auto":
        if ds is None:
            raise ValueError("c=auto needs a dataset")
        cands = [x for x in cfg.c_candidates if kind != "nmf" or x < cfg.m]
        sweep_seed = derive_seed(seed, SWEEP)
        losses = gt_construct.column_weight_losses(ds, cands, min(cfg.sample_size, ds.n), builder,
                                                   sweep_seed, cfg.decoder, cfg.k)
        ok = [(loss, cc) for cc, loss in losses.items() if not isinstance(loss, Exception)]
        if not ok:
            raise RuntimeError("every column-weight candidate failed: "
                               + "; ".join(f"c={cc}: {e}" for cc, e in losses.items()))
        c = min(ok)[1]
        info["c_sweep"] = {str(cc): (v if not isinstance(v, Exception) else str(v)) for cc, v in losses.items()}
    info["c"] = c
    return builder(c, seed), info


@dataclass
class MLGTModel:
    a: GroupTestingMatrix
    ensemble: ClassifierEnsemble
    meta: dict = field(default_factory=dict)


def fit(ds: Dataset, gt_cfg: GTConfig, train_cfg: TrainConfig | None = None, seed: int = 0,
        threads: int = 1) -> MLGTModel:
    train_cfg = train_cfg or TrainConfig()
    t0 = time.monotonic()
    a, info = build_matrix(gt_cfg, derive_seed(seed, CONSTRUCT), ds)
    t1 = time.monotonic()
    tcfg = TrainConfig(**{**asdict(train_cfg), "seed": derive_seed(seed, TRAIN)})
    ens = train_ensemble(ds, a, tcfg, threads=threads)
    t2 = time.monotonic()
    meta = {"seed": seed, "gt_config": asdict(gt_cfg), "resolved": info, "train_seed": tcfg.seed,
            "timings": {"construct": t1 - t0, "train": t2 - t1}}
    return MLGTModel(a, ens, meta)


def decode_margins(a: GroupTestingMatrix, margins: np.ndarray, decoder: str, k: int) -> list:
    return [codec.decode(a, codec.ReducedLabel((row > 0).astype(np.uint8), row), decoder, k) for row in margins]


def predict(model: MLGTModel, X, decoder: str = "topk", k: int = 5) -> list:
    """One DecodeResult per row of X."""
    if decoder == codec.PEELING and model.a.saffron_meta is None:
        raise ValueError(f"peeling decoder needs a SAFFRON matrix, got kind={model.a.kind!r}")
    return decode_margins(model.a, predict_margins(model.ensemble, X), decoder, k)


def oracle_margins(a: GroupTestingMatrix, ds: Dataset) -> np.ndarray:
    """Margins 2z - 1 of a perfect classifier for the rows of ``ds``."""
    return 2.0 * codec.reduce_many(a, ds.labels).toarray() - 1.0


# -- hierarchical variant ----------------------------------------------------

@dataclass
class HierModel:
    partition: HierPartition
    blocks: list  # MLGTModel per block
    d: int
    meta: dict = field(default_factory=dict)


def block_config(gt_cfg: GTConfig, d_block: int) -> GTConfig:
    """Blocks no larger than m fall back to one classifier per label."""
    if gt_cfg.kind == "identity" or (gt_cfg.m is not None and d_block <= gt_cfg.m):
        return GTConfig(kind="identity", k=gt_cfg.k)
    return gt_cfg


def fit_hierarchical(ds: Dataset, gt_cfg: GTConfig, train_cfg: TrainConfig | None = None, seed: int = 0,
                     max_block: int = 40000, n_blocks: int | None = None, partition: HierPartition | None = None,
                     threads: int = 1) -> HierModel:
    t0 = time.monotonic()
    if partition is None:
        partition = hierarchical_partition(build_label_graph(label_cooccurrence(ds)), max_block, n_blocks=n_blocks)
    t1 = time.monotonic()
    models = []
    for b, labels in enumerate(partition.blocks):
        models.append(fit(ds.restrict_labels(labels), block_config(gt_cfg, len(labels)), train_cfg,
                          derive_seed(seed, BLOCK, b), threads))
    t2 = time.monotonic()
    meta = {"seed": seed, "n_blocks": partition.n_blocks, "block_sizes": partition.block_sizes,
            "timings": {"partition": t1 - t0, "train_blocks": t2 - t1}}
    return HierModel(partition, models, ds.d, meta)


def block_prediction(res: codec.DecodeResult, a: GroupTestingMatrix, label_map: np.ndarray, d: int) -> BlockPrediction:
    """Local score of a decoded label: the fraction of its groups that fired."""
    w = np.maximum(a.col_weights(), 1)
    return BlockPrediction(label_map, res.support, res.scores[res.support] / w[res.support], d)


def predict_hierarchical(hm: HierModel, X, decoder: str = "topk", k: int = 5) -> list:
    per_block = []
    for labels, model in zip(hm.partition.blocks, hm.blocks):
        kk = min(k, len(labels))
        per_block.append([block_prediction(r, model.a, labels, hm.d) for r in predict(model, X, decoder, kk)])
    n = len(per_block[0]) if per_block else 0
    return [combine_predictions([blk[i] for blk in per_block], k, hm.partition.separators) for i in range(n)]


# -- persistence -------------------------------------------------------------

def save(model, directory, extra: dict | None = None) -> None:
    extra = dict(extra or {})
    if isinstance(model, MLGTModel):
        meta = {k: v for k, v in model.meta.items() if k != "timings"}
        save_model(directory, model.ensemble, model.a, {**meta, **extra})
        return
    os.makedirs(directory, exist_ok=True)
    write_partition(model.partition, os.path.join(directory, "partition.txt"))
    write_permutation(model.partition.permutation, os.path.join(directory, "permutation.txt"))
    for b, blk in enumerate(model.blocks):
        save(blk, os.path.join(directory, f"block_{b:03d}"), extra)
    from .classifier import FORMAT_VERSION
    record = {"format_version": FORMAT_VERSION, "hierarchical": True, "d": model.d,
              **{k: v for k, v in model.meta.items() if k != "timings"}, **extra}
    with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load(directory):
    with open(os.path.join(directory, "meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    if not meta.get("hierarchical"):
        ens, a, meta = load_model(directory)
        return MLGTModel(a, ens, meta)
    blocks, sep = read_partition(os.path.join(directory, "partition.txt"))
    hp = partition_from_blocks(meta["d"], blocks, sep)
    models = [load(os.path.join(directory, f"block_{b:03d}")) for b in range(len(blocks))]
    return HierModel(hp, models, meta["d"], meta)
