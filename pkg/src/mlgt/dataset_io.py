"""Reading, writing and summarizing multilabel datasets.

Files follow the Extreme Classification Repository text layout::

    n p d
    l1,l2,...,lk f1:v1 f2:v2 ...

Features and labels are held as CSR matrices. Label rows always have sorted,
duplicate-free column indices and unit data.
"""
from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np
import scipy.sparse as sp

DENSE_LIMIT = 4096


class DatasetFormatError(ValueError):
    """Raised when a repository-format file cannot be parsed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class IndexingConfig:
    labels_one_indexed: bool = False
    features_one_indexed: bool = True


@dataclass(frozen=True, eq=False)
class Dataset:
    features: sp.csr_matrix
    labels: sp.csr_matrix

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"feature rows ({self.features.shape[0]}) != label rows ({self.labels.shape[0]})"
            )

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def d(self) -> int:
        return self.labels.shape[1]

    def label_row(self, i: int) -> np.ndarray:
        lo, hi = self.labels.indptr[i], self.labels.indptr[i + 1]
        return self.labels.indices[lo:hi]

    def label_lists(self) -> list[np.ndarray]:
        return [self.label_row(i) for i in range(self.n)]

    def mean_label_count(self) -> float:
        return self.labels.nnz / self.n if self.n else 0.0

    def take(self, rows: Iterable[int]) -> "Dataset":
        rows = np.asarray(list(rows) if not isinstance(rows, np.ndarray) else rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows])

    def restrict_labels(self, label_ids: np.ndarray) -> "Dataset":
        """Keep only the given label columns (in the given order)."""
        label_ids = np.asarray(label_ids, dtype=np.int64)
        return Dataset(self.features, _binary_csr(self.labels[:, label_ids]))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return _csr_equal(self.features, other.features) and _csr_equal(self.labels, other.labels)

    def summary(self) -> dict:
        return {"n": self.n, "p": self.p, "d": self.d, "mean_labels": self.mean_label_count()}


def _csr_equal(a: sp.csr_matrix, b: sp.csr_matrix) -> bool:
    return (
        a.shape == b.shape
        and np.array_equal(a.indptr, b.indptr)
        and np.array_equal(a.indices, b.indices)
        and np.array_equal(a.data, b.data)
    )


def _binary_csr(m) -> sp.csr_matrix:
    m = sp.csr_matrix(m)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    m.data = np.ones_like(m.data, dtype=np.float64)
    return m


def make_dataset(features, label_lists: list, d: int) -> Dataset:
    """Build a Dataset from a feature matrix and per-row label index lists."""
    features = sp.csr_matrix(features, dtype=np.float64)
    indptr = np.zeros(len(label_lists) + 1, dtype=np.int64)
    for i, row in enumerate(label_lists):
        indptr[i + 1] = indptr[i] + len(row)
    indices = np.fromiter((j for row in label_lists for j in sorted(row)), dtype=np.int64, count=indptr[-1])
    labels = sp.csr_matrix(
        (np.ones(len(indices)), indices, indptr), shape=(len(label_lists), d)
    )
    validate(Dataset(features, labels))
    return Dataset(features, labels)


def validate(ds: Dataset) -> None:
    """Check the Dataset invariants, raising ValueError on the first violation."""
    y = ds.labels
    if y.nnz:
        if y.indices.min() < 0 or y.indices.max() >= ds.d:
            raise ValueError("label index out of range")
        for i in range(ds.n):
            row = y.indices[y.indptr[i]:y.indptr[i + 1]]
            if len(row) > 1 and np.any(np.diff(row) <= 0):
                raise ValueError(f"row {i}: label indices not strictly increasing")
    x = ds.features
    if x.nnz:
        if x.indices.min() < 0 or x.indices.max() >= ds.p:
            raise ValueError("feature index out of range")
        if not np.all(np.isfinite(x.data)):
            raise ValueError("non-finite feature value")


def _parse_index(tok: str, offset: int, bound: int, what: str, lineno: int) -> int:
    try:
        idx = int(tok) - offset
    except ValueError:
        raise DatasetFormatError(f"bad {what} index {tok!r}", lineno) from None
    if not 0 <= idx < bound:
        raise DatasetFormatError(f"{what} index {tok} out of range [0, {bound})", lineno)
    return idx


def parse_repo_format(stream: TextIO | str, indexing: IndexingConfig | None = None) -> Dataset:
    """Parse a repository-format text stream (or a path) into a Dataset."""
    if isinstance(stream, (str, os.PathLike)):
        with open(stream, encoding="utf-8", newline=None) as fh:
            return parse_repo_format(fh, indexing)
    indexing = indexing or IndexingConfig()
    loff = 1 if indexing.labels_one_indexed else 0
    foff = 1 if indexing.features_one_indexed else 0

    header = stream.readline()
    parts = header.split()
    if len(parts) != 3:
        raise DatasetFormatError(f"header must be 'n p d', got {header.strip()!r}", 1)
    try:
        n, p, d = (int(t) for t in parts)
    except ValueError:
        raise DatasetFormatError(f"non-integer header {header.strip()!r}", 1) from None
    if n < 0 or p < 0 or d < 1:
        raise DatasetFormatError("header counts out of range", 1)

    lab_indptr = [0]
    lab_idx: list[int] = []
    feat_indptr = [0]
    feat_idx: list[int] = []
    feat_val: list[float] = []
    rows = 0
    for lineno, raw in enumerate(stream, start=2):
        line = raw.rstrip("\r\n")
        if not line.strip() and rows >= n:
            continue  # trailing blank lines
        rows += 1
        if rows > n:
            raise DatasetFormatError(f"more than n={n} rows", lineno)
        head, _, rest = line.partition(" ")
        if head.strip():
            labs = sorted(_parse_index(t, loff, d, "label", lineno) for t in head.split(","))
            for a, b in zip(labs, labs[1:]):
                if a == b:
                    raise DatasetFormatError(f"duplicate label {a + loff}", lineno)
            lab_idx.extend(labs)
        lab_indptr.append(len(lab_idx))

        seen: set[int] = set()
        row_feats = []
        for tok in rest.split():
            key, sep, val = tok.partition(":")
            if not sep:
                raise DatasetFormatError(f"malformed feature token {tok!r}", lineno)
            j = _parse_index(key, foff, p, "feature", lineno)
            try:
                v = float(val)
            except ValueError:
                raise DatasetFormatError(f"malformed feature value {tok!r}", lineno) from None
            if not math.isfinite(v):
                raise DatasetFormatError(f"non-finite feature value {tok!r}", lineno)
            if j in seen:
                raise DatasetFormatError(f"duplicate feature {key}", lineno)
            seen.add(j)
            row_feats.append((j, v))
        row_feats.sort()
        feat_idx.extend(j for j, _ in row_feats)
        feat_val.extend(v for _, v in row_feats)
        feat_indptr.append(len(feat_idx))
    if rows != n:
        raise DatasetFormatError(f"header declares n={n} rows but found {rows}")

    features = sp.csr_matrix(
        (np.asarray(feat_val, dtype=np.float64), np.asarray(feat_idx, dtype=np.int64),
         np.asarray(feat_indptr, dtype=np.int64)),
        shape=(n, p),
    )
    labels = sp.csr_matrix(
        (np.ones(len(lab_idx)), np.asarray(lab_idx, dtype=np.int64), np.asarray(lab_indptr, dtype=np.int64)),
        shape=(n, d),
    )
    return Dataset(features, labels)


def load_dataset(path, indexing: IndexingConfig | None = None) -> Dataset:
    return parse_repo_format(os.fspath(path), indexing)


def write_repo_format(ds: Dataset, stream: TextIO | str, indexing: IndexingConfig | None = None) -> None:
    """Write ``ds`` in repository format; values use 17 significant digits."""
    if isinstance(stream, (str, os.PathLike)):
        with open(stream, "w", encoding="utf-8", newline="\n") as fh:
            write_repo_format(ds, fh, indexing)
            return
    indexing = indexing or IndexingConfig()
    loff = 1 if indexing.labels_one_indexed else 0
    foff = 1 if indexing.features_one_indexed else 0
    stream.write(f"{ds.n} {ds.p} {ds.d}\n")
    x = ds.features
    for i in range(ds.n):
        labs = ",".join(str(j + loff) for j in ds.label_row(i))
        lo, hi = x.indptr[i], x.indptr[i + 1]
        feats = " ".join(f"{j + foff}:{v:.17g}" for j, v in zip(x.indices[lo:hi], x.data[lo:hi]))
        stream.write(f"{labs} {feats}\n" if feats else f"{labs}\n")


def dumps(ds: Dataset, indexing: IndexingConfig | None = None) -> str:
    buf = io.StringIO()
    write_repo_format(ds, buf, indexing)
    return buf.getvalue()


def subsample_split(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Uniformly subsample ceil(fraction * n) rows, keeping source order."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    size = math.ceil(fraction * ds.n)
    if size < 1:
        raise ValueError("subsample would be empty")
    if size == ds.n:
        return ds
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(ds.n, size=size, replace=False))
    return ds.take(rows)


@dataclass(frozen=True, eq=False)
class CooccurrenceMatrix:
    """Symmetric label-by-label co-occurrence counts (full symmetric CSR storage)."""

    matrix: sp.csr_matrix

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        if self.dim > DENSE_LIMIT:
            raise MemoryError(f"refusing to densify a {self.dim}x{self.dim} co-occurrence matrix")
        return self.matrix.toarray()

    def triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Upper triangle plus diagonal as sorted (row, col, count) arrays."""
        coo = sp.triu(self.matrix).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order], coo.col[order], coo.data[order].astype(np.int64)


def label_cooccurrence(ds: Dataset) -> CooccurrenceMatrix:
    y = ds.labels
    m = (y.T @ y).tocsr()
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    m.data = np.rint(m.data)
    return CooccurrenceMatrix(m)
