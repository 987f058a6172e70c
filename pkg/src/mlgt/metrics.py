"""Precision@k, the capped top-5 precision, Hamming loss and reduction loss."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import codec
from .gt_construct import GroupTestingMatrix

TOP = 5


def _as_support(y, d: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.dtype == bool:
        return np.flatnonzero(y)
    return np.unique(y.astype(np.int64))


def precision_at_k(scores, y, k: int) -> float:
    """Fraction of true labels among the k highest scores (ties: smaller index first)."""
    scores = np.asarray(scores, dtype=np.float64)
    d = len(scores)
    if k < 1 or k > d:
        raise ValueError(f"k={k} outside [1, d={d}]")
    if np.count_nonzero(np.isfinite(scores)) < k:
        raise ValueError(f"fewer than k={k} finite scores")
    s = np.where(np.isfinite(scores), scores, -np.inf)
    top = np.lexsort((np.arange(d), -s))[:k]
    truth = np.zeros(d, dtype=bool)
    truth[_as_support(y)] = True
    return float(truth[top].sum()) / k


def top_labels(pred, count: int = TOP) -> np.ndarray:
    """First ``count`` labels of a prediction's ranking (support first, then by score)."""
    ranking = pred.ranking() if hasattr(pred, "ranking") else np.asarray(pred, dtype=np.int64)
    return ranking[:count]


def modified_precision_at_k(pred, y, k: int) -> float:
    """min(k, hits among the top-5 predicted labels) / k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    top = top_labels(pred, TOP)
    hits = np.isin(top, _as_support(y)).sum()
    return min(k, int(hits)) / k


def hamming_loss(y_hat, y) -> int:
    """Number of disagreeing coordinates.

    Dense boolean vectors must have equal length; index sequences are compared
    as sets.
    """
    a, b = np.asarray(y_hat), np.asarray(y)
    if a.dtype == bool and b.dtype == bool:
        if a.shape != b.shape:
            raise ValueError("dimension mismatch")
        return int(np.count_nonzero(a != b))
    return int(len(np.setxor1d(_as_support(a), _as_support(b))))


def _decode_loss(a: GroupTestingMatrix, margins: np.ndarray, labels: sp.csr_matrix, decoder: str, k) -> float:
    total = 0
    for i, row in enumerate(margins):
        res = codec.decode(a, codec.ReducedLabel((row > 0).astype(np.uint8), row), decoder, k)
        total += hamming_loss(res.support, labels.indices[labels.indptr[i]:labels.indptr[i + 1]])
    return total / max(len(margins), 1)


def reduction_loss(a: GroupTestingMatrix, decoder: str, ds, sample_size: int, seed: int,
                   ensemble=None, k: int | None = None) -> dict:
    """Hamming loss of the group-testing step alone, and optionally after classification.

    The reduction-only loss decodes the exact z with margins 2z - 1, so that
    score tie-breaks see the same input a perfect classifier would give.
    ``ensemble`` may be a trained ensemble or a precomputed (n, m) margin
    array for the rows of ``ds``; bits are ``margin > 0``.
    """
    from .classifier import ClassifierEnsemble, predict_margins

    if sample_size > ds.n:
        raise ValueError(f"sample_size={sample_size} exceeds n={ds.n}")
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(ds.n, size=sample_size, replace=False))
    labels = ds.labels[rows]
    exact = 2.0 * codec.reduce_many(a, labels).toarray() - 1.0
    out = {"r_loss": _decode_loss(a, exact, labels, decoder, k), "t_loss": None, "sample_size": sample_size}
    if ensemble is not None:
        if isinstance(ensemble, ClassifierEnsemble):
            margins = predict_margins(ensemble, ds.features[rows])
        else:
            margins = np.asarray(ensemble, dtype=np.float64)[rows]
        out["t_loss"] = _decode_loss(a, margins, labels, decoder, k)
    return out


@dataclass
class EvalReport:
    means: dict = field(default_factory=dict)  # (metric, k) -> mean
    n_test: int = 0
    per_instance: dict | None = None

    def rows(self) -> list[tuple]:
        return [(metric, k, value, self.n_test) for (metric, k), value in sorted(self.means.items(), key=_key)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "k", "value", "n_test"])
        for metric, k, value, n in self.rows():
            w.writerow([metric, "" if k is None else k, f"{value:.10g}", n])
        return buf.getvalue()

    def __getitem__(self, key):
        return self.means[key]


def _key(item):
    (metric, k), _ = item
    return (metric, -1 if k is None else k)


def evaluate(predictions, truth: sp.csr_matrix, ks=(1, 3, 5), keep_per_instance: bool = False) -> EvalReport:
    """Average P@k, capped precision and Hamming loss over test instances.

    ``predictions`` is a sequence of DecodeResult, one per row of ``truth``.
    """
    truth = sp.csr_matrix(truth)
    n = truth.shape[0]
    if len(predictions) != n:
        raise ValueError(f"{len(predictions)} predictions for {n} instances")
    per = {("P@k", k): np.zeros(n) for k in ks}
    per.update({("Pi@k", k): np.zeros(n) for k in ks})
    per[("hamming", None)] = np.zeros(n)
    for i, pred in enumerate(predictions):
        y = truth.indices[truth.indptr[i]:truth.indptr[i + 1]]
        ranking = pred.ranking()
        top = ranking[:max(max(ks), TOP)]
        hit = np.isin(top, y)
        hits5 = int(hit[:TOP].sum())
        for k in ks:
            per[("P@k", k)][i] = hit[:k].sum() / k
            per[("Pi@k", k)][i] = min(k, hits5) / k
        per[("hamming", None)][i] = hamming_loss(pred.support, y)
    report = EvalReport({key: float(v.mean()) if n else 0.0 for key, v in per.items()}, n)
    if keep_per_instance:
        report.per_instance = per
    return report
