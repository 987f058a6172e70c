"""Boolean label reduction and the three decoders (linear, top-k, peeling)."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .gt_construct import GroupTestingMatrix, signature_bits

LINEAR, TOPK, PEELING = "linear", "topk", "peeling"
DECODERS = (LINEAR, TOPK, PEELING)


@dataclass
class ReducedLabel:
    bits: np.ndarray  # uint8, length m
    scores: np.ndarray | None = None  # classifier margins, length m


@dataclass
class DecodeResult:
    support: np.ndarray
    method: str
    scores: np.ndarray | None = None  # b = A^T bits, length d
    margin_sums: np.ndarray | None = None
    peel_success: bool | None = None
    work: dict = field(default_factory=dict)

    def ranking(self) -> np.ndarray:
        """All labels, support first; each part ordered by b, then margin sum, then index."""
        d = len(self.scores) if self.scores is not None else int(self.support.max(initial=-1)) + 1
        return rank_labels(d, self.support, self.scores, self.margin_sums)


def rank_labels(d: int, support, b=None, margin_sums=None) -> np.ndarray:
    idx = np.arange(d)
    b = np.zeros(d) if b is None else np.asarray(b, dtype=np.float64)
    ms = np.zeros(d) if margin_sums is None else np.asarray(margin_sums, dtype=np.float64)
    outside = np.ones(d, dtype=bool)
    outside[np.asarray(support, dtype=np.int64)] = False
    return np.lexsort((idx, -ms, -b, outside))


def _support(a: GroupTestingMatrix, y) -> np.ndarray:
    y = np.asarray(y)
    if y.dtype == bool:
        if y.shape != (a.d,):
            raise ValueError(f"dimension mismatch: y has length {len(y)}, A has d={a.d}")
        return np.flatnonzero(y)
    y = y.astype(np.int64).ravel()
    if len(y) and (y.min() < 0 or y.max() >= a.d):
        raise ValueError(f"label index out of range for d={a.d}")
    return y


def boolean_reduce(a: GroupTestingMatrix, y) -> ReducedLabel:
    """z = A OR y. ``y`` is a label-index sequence or a boolean length-d mask."""
    bits = np.zeros(a.m, dtype=np.uint8)
    csc = a.csc
    for j in _support(a, y):
        bits[csc.indices[csc.indptr[j]:csc.indptr[j + 1]]] = 1
    return ReducedLabel(bits)


def reduce_many(a: GroupTestingMatrix, labels: sp.spmatrix) -> sp.csr_matrix:
    """Row-wise reduction of an (n, d) label matrix to an (n, m) boolean matrix."""
    if labels.shape[1] != a.d:
        raise ValueError(f"dimension mismatch: labels have d={labels.shape[1]}, A has d={a.d}")
    z = (sp.csr_matrix(labels, dtype=np.float64) @ a.matrix.T.astype(np.float64)).tocsr()
    z.data = (z.data > 0).astype(np.float64)
    z.eliminate_zeros()
    return z


def _check(a: GroupTestingMatrix, z: ReducedLabel) -> np.ndarray:
    bits = np.asarray(z.bits)
    if bits.shape != (a.m,):
        raise ValueError(f"dimension mismatch: z has length {bits.shape}, A has m={a.m}")
    return bits


def group_counts(a: GroupTestingMatrix, bits: np.ndarray) -> np.ndarray:
    """b = A^T bits as integer counts."""
    return np.asarray(a.csc.T @ bits.astype(np.int64)).ravel()


def _margin_sums(a: GroupTestingMatrix, z: ReducedLabel):
    if z.scores is None:
        return None
    return np.asarray(a.csc.T @ np.asarray(z.scores, dtype=np.float64)).ravel()


def linear_decode(a: GroupTestingMatrix, z: ReducedLabel) -> DecodeResult:
    """Labels whose every group fired; labels in no group are never reported."""
    bits = _check(a, z)
    b = group_counts(a, bits)
    w = a.col_weights()
    support = np.flatnonzero((b == w) & (w > 0))
    return DecodeResult(support, LINEAR, b, _margin_sums(a, z))


def topk_score_decode(a: GroupTestingMatrix, z: ReducedLabel, k: int) -> DecodeResult:
    """The k labels with the largest b; ties by margin sum, then smaller index."""
    if not 1 <= k <= a.d:
        raise ValueError(f"k={k} outside [1, d={a.d}]")
    bits = _check(a, z)
    b = group_counts(a, bits)
    ms = _margin_sums(a, z)
    order = rank_labels(a.d, [], b, ms)
    return DecodeResult(np.sort(order[:k]), TOPK, b, ms)


class BinOutcome(NamedTuple):
    kind: str  # "empty", "singleton", "doubleton", "unresolved"
    label: int | None = None


EMPTY = BinOutcome("empty")
UNRESOLVED = BinOutcome("unresolved")


def _bits_to_index(bits: np.ndarray) -> int:
    out = 0
    for x in bits:
        out = (out << 1) | int(x)
    return out


def _signature(j: int, b: int) -> np.ndarray:
    hi = (j >> np.arange(b - 1, -1, -1)) & 1
    return np.concatenate([hi, 1 - hi]).astype(np.uint8)


def saffron_bin_decode(v, d: int, known: int | None = None) -> BinOutcome:
    """Classify one bin observation of length 2b.

    With ``known`` set, a bin holding exactly that label and one other is
    resolved by reading the partner's bits: where both signature halves fired
    the two labels differ, elsewhere they agree.
    """
    v = np.asarray(v, dtype=np.uint8)
    b = signature_bits(d)
    if v.shape != (2 * b,):
        raise ValueError(f"bin observation must have length {2 * b}")
    if not v.any():
        return EMPTY
    hi, lo = v[:b], v[b:]
    if np.all(hi ^ lo):
        j = _bits_to_index(hi)
        if j < d and np.array_equal(_signature(j, b), v):
            return BinOutcome("singleton", j)
        return UNRESOLVED
    if known is None:
        return UNRESOLVED
    ks = _signature(known, b)
    if np.any(ks & ~v & 1):
        return UNRESOLVED
    conflict = hi & lo
    kb = ks[:b]
    partner_bits = np.where(conflict == 1, 1 - kb, kb)
    j = _bits_to_index(partner_bits)
    if j >= d or j == known:
        return UNRESOLVED
    if not np.array_equal(ks | _signature(j, b), v):
        return UNRESOLVED
    return BinOutcome("doubleton", j)


def saffron_peel_decode(a: GroupTestingMatrix, z: ReducedLabel, k: int) -> DecodeResult:
    """Bin decoding of every bin, then peeling along resolvable doubletons.

    When the peeled set reproduces z exactly and has at most k labels it is
    returned as is. A larger consistent set is cut to the k labels with the
    largest b. Otherwise the peeled labels are kept and the rest of the k slots
    are filled in top-k score order, with ``peel_success=False``.
    """
    meta = a.saffron_meta
    if meta is None:
        raise ValueError(f"peeling decoder needs a SAFFRON matrix, got kind={a.kind!r}")
    bits = _check(a, z)
    d, m1, m2 = a.d, meta.m1, meta.m2
    b = m2 // 2
    obs = bits.reshape(m1, m2)

    calls = 0
    frontier: deque[int] = deque()
    decoded: set[int] = set()
    for i in range(m1):
        calls += 1
        out = saffron_bin_decode(obs[i], d)
        if (out.kind == "singleton" and out.label not in decoded and _in_bin(meta, i, out.label)
                and _consistent(meta, obs, out.label, b)):
            decoded.add(out.label)
            frontier.append(out.label)
    first_pass = calls

    peeled: list[int] = []
    while frontier:
        j = frontier.popleft()
        for i in meta.label_bins[j]:
            calls += 1
            out = saffron_bin_decode(obs[i], d, known=j)
            if out.kind != "doubleton" or out.label in decoded:
                continue
            p = out.label
            if _in_bin(meta, i, p) and _consistent(meta, obs, p, b):
                decoded.add(p)
                frontier.append(p)
        peeled.append(j)

    peeled_arr = np.array(sorted(peeled), dtype=np.int64)
    consistent = np.array_equal(boolean_reduce(a, peeled_arr).bits, bits)
    counts = group_counts(a, bits)
    ms = _margin_sums(a, z)
    work = {"first_pass_calls": first_pass, "peel_calls": calls - first_pass, "peeled": len(peeled),
            "peeled_labels": peeled_arr}
    if consistent and len(peeled_arr) <= k:
        return DecodeResult(peeled_arr, PEELING, counts, ms, True, work)
    if len(peeled_arr) >= k:
        order = rank_labels(d, [], counts, ms)
        keep = order[np.isin(order, peeled_arr)][:k]
        return DecodeResult(np.sort(keep), PEELING, counts, ms, consistent, work)
    order = rank_labels(d, peeled_arr, counts, ms)
    k = min(k, d)
    return DecodeResult(np.sort(order[:k]), PEELING, counts, ms, False, work)


def _in_bin(meta, i: int, j: int) -> bool:
    members = meta.bin_edges[i]
    pos = np.searchsorted(members, j)
    return pos < len(members) and members[pos] == j


def _consistent(meta, obs: np.ndarray, j: int, b: int) -> bool:
    """No bin of label j has a zero where j's signature has a one."""
    sig = _signature(j, b)
    for i in meta.label_bins[j]:
        if np.any(sig & ~obs[i] & 1):
            return False
    return True


def decode(a: GroupTestingMatrix, z: ReducedLabel, method: str, k: int | None = None) -> DecodeResult:
    if method == LINEAR:
        return linear_decode(a, z)
    if method == TOPK:
        return topk_score_decode(a, z, k)
    if method == PEELING:
        return saffron_peel_decode(a, z, k)
    raise ValueError(f"unknown decoder {method!r}; expected one of {DECODERS}")


def reduction_hamming(a: GroupTestingMatrix, labels: sp.spmatrix, decoder: str = LINEAR,
                      k: int | None = None) -> float:
    """Mean Hamming loss of decode(reduce(y)) over the rows of ``labels``."""
    labels = sp.csr_matrix(labels)
    n = labels.shape[0]
    if n == 0:
        return 0.0
    if decoder == LINEAR:
        z = reduce_many(a, labels)
        counts = (z @ a.matrix.astype(np.float64)).toarray()
        w = a.col_weights()
        pred = (counts == w) & (w > 0)
        truth = labels.toarray() > 0
        return float(np.mean(np.sum(pred != truth, axis=1)))
    total = 0
    for i in range(n):
        y = labels.indices[labels.indptr[i]:labels.indptr[i + 1]]
        res = decode(a, boolean_reduce(a, y), decoder, k)
        total += len(np.setxor1d(res.support, y))
    return total / n
