"""Group testing matrix constructions and the label-correlation metric.

Every builder returns a :class:`GroupTestingMatrix`, an ``m x d`` binary
matrix whose rows are groups (pools) and whose columns are labels. All
randomized builders take an explicit integer seed and draw from numpy's
PCG64 generator.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.io
import scipy.sparse as sp

from .dataset_io import DENSE_LIMIT, Dataset, label_cooccurrence

KINDS = ("sp", "cw", "saffron", "nmf", "identity")


@dataclass(frozen=True)
class SaffronMeta:
    m1: int
    m2: int
    bin_edges: tuple  # bin i -> sorted array of its labels
    label_bins: tuple  # label j -> sorted array of its bins


@dataclass(eq=False)
class GroupTestingMatrix:
    matrix: sp.csr_matrix
    kind: str
    params: dict = field(default_factory=dict)
    saffron_meta: SaffronMeta | None = None

    def __post_init__(self):
        a = sp.csr_matrix(self.matrix)
        a.sum_duplicates()
        a.eliminate_zeros()
        a.sort_indices()
        a.data = np.ones(a.nnz, dtype=np.int8)
        self.matrix = a
        self._csc = a.tocsc()
        self._csc.sort_indices()

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    @property
    def csc(self) -> sp.csc_matrix:
        return self._csc

    def row(self, i: int) -> np.ndarray:
        a = self.matrix
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def col(self, j: int) -> np.ndarray:
        a = self._csc
        return a.indices[a.indptr[j]:a.indptr[j + 1]]

    @property
    def rows(self) -> list[np.ndarray]:
        return [self.row(i) for i in range(self.m)]

    @property
    def cols(self) -> list[np.ndarray]:
        return [self.col(j) for j in range(self.d)]

    def col_weights(self) -> np.ndarray:
        return np.diff(self._csc.indptr)

    def row_weights(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray().astype(np.int8)

    def check_duality(self) -> bool:
        """True when the row and column views describe the same entries."""
        t = self._csc.tocsr()
        t.sort_indices()
        return (
            np.array_equal(t.indptr, self.matrix.indptr)
            and np.array_equal(t.indices, self.matrix.indices)
        )


def from_dense(a, kind: str = "custom", **params) -> GroupTestingMatrix:
    return GroupTestingMatrix(sp.csr_matrix(np.asarray(a) != 0), kind, dict(params))


def identity(d: int) -> GroupTestingMatrix:
    return GroupTestingMatrix(sp.identity(d, format="csr"), "identity", {"d": d})


def build_sp_gt(m: int, d: int, k: int, seed: int, prob: float | None = None) -> GroupTestingMatrix:
    """Entrywise Bernoulli(1/(k+1)) matrix; ``prob`` overrides the rate."""
    if m < 1 or d < 1 or k < 1:
        raise ValueError("m, d and k must be positive")
    q = 1.0 / (k + 1) if prob is None else float(prob)
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"probability {q} outside [0, 1]")
    rng = np.random.default_rng(seed)
    a = rng.random((m, d)) < q
    return GroupTestingMatrix(sp.csr_matrix(a), "sp", {"m": m, "d": d, "k": k, "prob": q, "seed": seed})


def build_cw_gt(d: int, c: int, r: int, seed: int, pad: bool = False) -> GroupTestingMatrix:
    """Constant-weight (Gallager) construction with c ones per column and r per row.

    The first of the c stacked submatrices puts labels ``[i*r, (i+1)*r)`` in
    row i; the others are uniform column permutations of it. When r does not
    divide d and ``pad`` is set, d is padded to the next multiple of r and the
    padded columns are dropped afterwards, so a few rows then hold fewer than r
    labels.
    """
    if d < 1 or c < 1 or r < 1:
        raise ValueError("d, c and r must be positive")
    d_pad = d
    if d % r:
        if not pad:
            raise ValueError(f"row weight r={r} does not divide d={d}")
        d_pad = r * math.ceil(d / r)
    blocks = d_pad // r
    rng = np.random.default_rng(seed)
    base_row = np.arange(d_pad) // r
    rows, cols = [], []
    for s in range(c):
        perm = np.arange(d_pad) if s == 0 else rng.permutation(d_pad)
        rows.append(s * blocks + base_row[perm])
        cols.append(np.arange(d_pad))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    keep = cols < d
    a = sp.csr_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(blocks * c, d))
    return GroupTestingMatrix(a, "cw", {"d": d, "c": c, "r": r, "d_padded": d_pad, "seed": seed})


def build_cw_for_m(d: int, m: int, c: int, seed: int) -> GroupTestingMatrix:
    """CW matrix with at most m rows: uses m // c rows per submatrix and pads d."""
    blocks = m // c
    if blocks < 1:
        raise ValueError(f"c={c} exceeds m={m}")
    r = math.ceil(d / blocks)
    return build_cw_gt(d, c, r, seed, pad=True)


@dataclass(frozen=True)
class SignatureMatrix:
    """Columns are ``[bits(j) MSB first; complement of bits(j)]``."""

    d: int
    b: int
    columns: np.ndarray  # (2b, d) uint8

    @property
    def m2(self) -> int:
        return 2 * self.b

    def column(self, j: int) -> np.ndarray:
        return self.columns[:, j]

    def encode(self, j: int) -> np.ndarray:
        bits = (j >> np.arange(self.b - 1, -1, -1)) & 1
        return np.concatenate([bits, 1 - bits]).astype(np.uint8)


def signature_bits(d: int) -> int:
    return max(1, math.ceil(math.log2(d)))


def signature_matrix(d: int) -> SignatureMatrix:
    if d < 2:
        raise ValueError("signature matrix needs d >= 2")
    b = signature_bits(d)
    j = np.arange(d)
    bits = ((j[None, :] >> np.arange(b - 1, -1, -1)[:, None]) & 1).astype(np.uint8)
    return SignatureMatrix(d, b, np.vstack([bits, 1 - bits]))


def regular_bipartite(d: int, m1: int, c: int, seed: int, strict: bool = True,
                      max_retries: int = 20) -> np.ndarray:
    """Left-c-regular bipartite graph on d labels and m1 bins by stub matching.

    Returns a ``(d, c)`` array of sorted bin indices per label. Right degrees
    are all ``r = d*c/m1`` when that is an integer; with ``strict=False`` they
    may instead differ by at most one. Stubs landing twice on the same bin are
    swapped with random stubs until the graph is simple; after ``max_retries``
    unsuccessful redraws a RuntimeError is raised.
    """
    if c > m1:
        raise ValueError(f"left degree c={c} exceeds bin count m1={m1}")
    total = d * c
    if strict and total % m1:
        raise ValueError(f"m1={m1} does not divide d*c={total}; no right-regular graph exists")
    base, extra = divmod(total, m1)
    right_stubs = np.concatenate([np.repeat(np.arange(m1), base), np.arange(extra)])
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        pairs = right_stubs[rng.permutation(total)].reshape(d, c)
        for _ in range(50 * c):
            pairs.sort(axis=1)
            dup_mask = pairs[:, 1:] == pairs[:, :-1]
            bad = np.flatnonzero(dup_mask.any(axis=1))
            if not len(bad):
                return pairs
            flat = pairs.reshape(-1)
            for j in bad:
                pos = j * c + 1 + int(np.argmax(dup_mask[j]))
                other = int(rng.integers(total))
                flat[pos], flat[other] = flat[other], flat[pos]
    raise RuntimeError(f"could not draw a simple left-{c}-regular graph in {max_retries} tries")


def build_saffron(d: int, m1: int, c: int, seed: int, strict: bool = True) -> GroupTestingMatrix:
    """Stack of m1 bins, bin i being ``U diag(t_i)`` for bin-membership row t_i."""
    if d < 2:
        raise ValueError("saffron construction needs d >= 2")
    u = signature_matrix(d)
    pairs = regular_bipartite(d, m1, c, seed, strict=strict)
    m2 = u.m2
    rows, cols = [], []
    bin_members: list[list[int]] = [[] for _ in range(m1)]
    for j in range(d):
        sig_rows = np.flatnonzero(u.columns[:, j])
        for i in pairs[j]:
            bin_members[i].append(j)
            rows.append(i * m2 + sig_rows)
            cols.append(np.full(len(sig_rows), j))
    a = sp.csr_matrix(
        (np.ones(sum(len(r) for r in rows)), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m1 * m2, d),
    )
    meta = SaffronMeta(
        m1=m1,
        m2=m2,
        bin_edges=tuple(np.asarray(b, dtype=np.int64) for b in bin_members),
        label_bins=tuple(np.asarray(p, dtype=np.int64) for p in pairs),
    )
    degs = [len(b) for b in bin_members]
    params = {"d": d, "m1": m1, "m2": m2, "c": c, "r": max(degs), "seed": seed}
    return GroupTestingMatrix(a, "saffron", params, meta)


def saffron_meta_from_matrix(a: sp.csr_matrix, m1: int, m2: int) -> SaffronMeta:
    """Recover bin membership from a stacked SAFFRON matrix."""
    a = sp.csr_matrix(a)
    d = a.shape[1]
    bins = []
    for i in range(m1):
        block = a[i * m2:(i + 1) * m2]
        bins.append(np.unique(block.indices).astype(np.int64))
    label_bins: list[list[int]] = [[] for _ in range(d)]
    for i, members in enumerate(bins):
        for j in members:
            label_bins[j].append(i)
    return SaffronMeta(m1, m2, tuple(bins), tuple(np.asarray(x, dtype=np.int64) for x in label_bins))


def build_nmf_gt(ds: Dataset, m: int, c: float, seed: int, nmf_config: dict | None = None,
                 basis=None) -> GroupTestingMatrix:
    """Data-dependent construction sampled from a reweighted symNMF basis.

    ``basis`` may carry a precomputed :class:`~mlgt.symnmf.NmfBasis` so that
    several column weights or sampling seeds share one factorization.
    """
    from . import symnmf

    if m >= ds.d:
        raise ValueError(f"NMF construction needs m < d (m={m}, d={ds.d})")
    if c < 1 or c >= m:
        raise ValueError(f"column weight c={c} must satisfy 1 <= c < m={m}")
    cfg = dict(nmf_config or {})
    if basis is None:
        basis = symnmf.symnmf_cd(label_cooccurrence(ds), m, seed=cfg.pop("seed", seed), **cfg)
    probs = symnmf.reweight_columns(basis, c)
    a = symnmf.sample_columns(probs, seed)
    a = repair_empty_columns(a, probs.H)
    return GroupTestingMatrix(
        sp.csr_matrix(a), "nmf", {"m": m, "d": ds.d, "c": c, "seed": seed, "nmf_sweeps": len(basis.objective_trace)}
    )


def repair_empty_columns(a: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Give every all-zero column a 1 at its most probable group."""
    a = np.array(a, dtype=bool, copy=True)
    empty = np.flatnonzero(~a.any(axis=0))
    if len(empty):
        a[np.argmax(probs[:, empty], axis=0), empty] = True
    return a


def correlation_metric(a: GroupTestingMatrix, ds: Dataset) -> float:
    """Frobenius distance between (1/n) Y^T Y and (1/m) A^T A."""
    if a.d != ds.d:
        raise ValueError(f"dimension mismatch: A has d={a.d}, dataset has d={ds.d}")
    yy = label_cooccurrence(ds).matrix.astype(np.float64) / ds.n
    at = a.matrix.astype(np.float64)
    aa = (at.T @ at) / a.m
    if a.d <= DENSE_LIMIT:
        return float(np.linalg.norm(yy.toarray() - aa.toarray()))
    diff = (yy - aa).tocsr()
    return float(np.sqrt(np.sum(diff.data ** 2)))


def column_weight_losses(ds: Dataset, c_candidates: Sequence, sample_size: int,
                         builder: Callable[[int, int], GroupTestingMatrix], seed: int,
                         decoder: str = "linear", k: int | None = None) -> dict:
    """Mean Hamming loss of reduce-then-decode on sampled training labels, per c.

    Candidates whose builder raises are reported with the exception instead of
    a loss.
    """
    from . import codec

    if not len(c_candidates):
        raise ValueError("no column-weight candidates")
    if sample_size > ds.n:
        raise ValueError(f"sample_size={sample_size} exceeds n={ds.n}")
    ss = np.random.SeedSequence(seed)
    rows = np.sort(np.random.default_rng(ss.spawn(1)[0]).choice(ds.n, size=sample_size, replace=False))
    truth = ds.labels[rows]
    out = {}
    for idx, c in enumerate(c_candidates):
        cand_seed = int(np.random.SeedSequence([seed, idx]).generate_state(1)[0])
        try:
            a = builder(c, cand_seed)
        except Exception as exc:  # recorded, candidate skipped
            out[c] = exc
            continue
        out[c] = codec.reduction_hamming(a, truth, decoder=decoder, k=k)
    return out


def select_column_weight(ds: Dataset, c_candidates: Sequence, sample_size: int,
                         builder: Callable[[int, int], GroupTestingMatrix], seed: int,
                         decoder: str = "linear", k: int | None = None) -> int:
    """Column weight with the smallest reduction Hamming loss; ties go to the smaller c."""
    losses = column_weight_losses(ds, c_candidates, sample_size, builder, seed, decoder, k)
    ok = [(loss, c) for c, loss in losses.items() if not isinstance(loss, Exception)]
    if not ok:
        errs = "; ".join(f"c={c}: {e}" for c, e in losses.items())
        raise RuntimeError(f"every column-weight candidate failed ({errs})")
    return min(ok)[1]


def write_matrix_market(a: GroupTestingMatrix, path) -> None:
    """Write A as a 1-based coordinate pattern file plus a ``.json`` sidecar."""
    path = os.fspath(path)
    scipy.io.mmwrite(path, a.matrix, field="pattern", symmetry="general")
    if not path.endswith(".mtx"):
        path += ".mtx"
    meta = {"kind": a.kind, "m": a.m, "d": a.d}
    meta.update({k: v for k, v in a.params.items() if k in ("c", "r", "m1", "m2", "seed", "k", "prob", "d_padded")})
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_matrix_market(path) -> GroupTestingMatrix:
    path = os.fspath(path)
    a = sp.csr_matrix(scipy.io.mmread(path))
    meta = {}
    if os.path.exists(path + ".json"):
        with open(path + ".json", encoding="utf-8") as fh:
            meta = json.load(fh)
    kind = meta.pop("kind", "custom")
    smeta = None
    if kind == "saffron":
        smeta = saffron_meta_from_matrix(a, meta["m1"], meta["m2"])
    meta.pop("m", None)
    meta.pop("d", None)
    return GroupTestingMatrix(a, kind, meta, smeta)
