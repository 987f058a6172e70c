"""Symmetric NMF ``M ~ H^T H`` by exact cyclic coordinate descent.

Each scalar ``H[q, j]`` is replaced by the exact minimizer, over nonnegative
values, of the quartic that the objective restricts to. The kernel keeps
``G = H H^T`` (m x m) and the squared column norms of H up to date, so one
update costs ``O(nnz(M[j]) + m)`` and M may stay sparse.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

from .dataset_io import DENSE_LIMIT, CooccurrenceMatrix


@dataclass(frozen=True)
class NmfBasis:
    H: np.ndarray  # (m, d), nonnegative
    objective_trace: np.ndarray  # initial value, then one entry per sweep

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def d(self) -> int:
        return self.H.shape[1]


@dataclass(frozen=True)
class SamplingBasis:
    H: np.ndarray  # (m, d), entries in [0, 1]
    target_weight: float


@numba.njit(cache=True)
def _quartic(s, w, a2, g):
    return s * s * s * s + 4.0 * w * s * s * s + a2 * s * s - 4.0 * g * s


@numba.njit(cache=True)
def _best_value(w, a2, g):
    """Nonnegative x minimizing the restricted objective at s = x - w."""
    p = 0.5 * a2 - 3.0 * w * w
    q = 2.0 * w * w * w - 0.5 * a2 * w - g
    best_x = w
    best_f = 0.0
    # boundary x = 0
    f0 = _quartic(-w, w, a2, g)
    if f0 < best_f:
        best_f = f0
        best_x = 0.0
    disc = 0.25 * q * q + p * p * p / 27.0
    if disc > 0.0:
        sd = math.sqrt(disc)
        u = -0.5 * q + sd
        v = -0.5 * q - sd
        x = math.copysign(abs(u) ** (1.0 / 3.0), u) + math.copysign(abs(v) ** (1.0 / 3.0), v)
        if x > 0.0:
            f = _quartic(x - w, w, a2, g)
            if f < best_f:
                best_f = f
                best_x = x
    elif p < 0.0:
        r = 2.0 * math.sqrt(-p / 3.0)
        pr = p * r
        arg = 3.0 * q / pr if pr != 0.0 else 0.0
        arg = min(1.0, max(-1.0, arg))
        phi = math.acos(arg) / 3.0
        for kk in range(3):
            x = r * math.cos(phi - 2.0 * math.pi * kk / 3.0)
            if x > 0.0:
                f = _quartic(x - w, w, a2, g)
                if f < best_f:
                    best_f = f
                    best_x = x
    else:  # p == 0 and disc <= 0 -> q == 0, triple root at 0
        pass
    return best_x


@numba.njit(cache=True)
def _cd_sweep(indptr, indices, data, diag, W, G, nrm):
    d, m = W.shape
    for q in range(m):
        for j in range(d):
            w = W[j, q]
            mw = 0.0
            for t in range(indptr[j], indptr[j + 1]):
                mw += data[t] * W[indices[t], q]
            wg = 0.0
            for p in range(m):
                wg += W[j, p] * G[p, q]
            g = mw - wg
            rjj = diag[j] - nrm[j]
            a2 = 2.0 * (G[q, q] - w * w) + 4.0 * w * w - 2.0 * rjj
            x = _best_value(w, a2, g)
            s = x - w
            if s != 0.0:
                for p in range(m):
                    if p != q:
                        G[q, p] += s * W[j, p]
                        G[p, q] = G[q, p]
                G[q, q] += x * x - w * w
                nrm[j] += x * x - w * w
                W[j, q] = x


def _objective(M: sp.csr_matrix, W: np.ndarray, m_sq: float) -> float:
    if M.shape[0] <= DENSE_LIMIT:
        r = M.toarray() - W @ W.T
        return float(np.sum(r * r))
    mw = M @ W
    g = W.T @ W
    return float(m_sq - 2.0 * np.sum(mw * W) + np.sum(g * g))


def symnmf_cd(M, m: int, max_sweeps: int = 100, tol: float = 1e-4, seed: int = 0) -> NmfBasis:
    """Rank-m symmetric NMF of M by cyclic coordinate descent.

    Parameters
    ----------
    M : CooccurrenceMatrix, sparse matrix or ndarray
        Symmetric nonnegative (d, d) matrix.
    m : int
        Factorization rank.
    max_sweeps : int
        Upper bound on full passes over the entries of H.
    tol : float
        Stop once the relative objective decrease of a sweep falls below it.
    seed : int
        Seeds the uniform initialization ``H ~ U(0, sqrt(mean(M) / m))``.
    """
    if isinstance(M, CooccurrenceMatrix):
        M = M.matrix
    M = sp.csr_matrix(M, dtype=np.float64)
    d = M.shape[0]
    if M.shape != (d, d):
        raise ValueError("M must be square")
    if m < 1 or m > d:
        raise ValueError(f"rank m={m} must satisfy 1 <= m <= d={d}")
    asym = M - M.T
    if asym.nnz and np.max(np.abs(asym.data)) > 1e-12 * max(1.0, np.max(np.abs(M.data))):
        raise ValueError("M is not symmetric")
    if M.nnz and M.data.min() < 0:
        raise ValueError("M has negative entries")
    M.sort_indices()

    rng = np.random.default_rng(seed)
    scale = math.sqrt(max(M.sum() / (d * d), 0.0) / m)
    H = rng.random((m, d)) * scale
    W = np.ascontiguousarray(H.T)
    G = W.T @ W
    nrm = np.sum(W * W, axis=1)
    diag = M.diagonal().astype(np.float64)
    m_sq = float(np.sum(M.data ** 2))

    trace = [_objective(M, W, m_sq)]
    for _ in range(max_sweeps):
        _cd_sweep(M.indptr.astype(np.int64), M.indices.astype(np.int64), M.data, diag, W, G, nrm)
        # refresh accumulated quantities to keep rounding drift out of G
        G = W.T @ W
        nrm = np.sum(W * W, axis=1)
        trace.append(_objective(M, W, m_sq))
        prev, cur = trace[-2], trace[-1]
        if prev <= 0 or (prev - cur) / prev < tol:
            break
    return NmfBasis(np.ascontiguousarray(W.T), np.asarray(trace))


def reweight_columns(basis, c: float, max_rounds: int = 50) -> SamplingBasis:
    """Turn basis columns into Bernoulli probabilities that sum to c.

    Each column is normalized to sum one (all-zero columns become uniform),
    scaled by c, and then entries above one are clipped with the excess spread
    proportionally over the remaining positive entries below one, repeated
    until no entry exceeds one. A column with fewer than c positive entries
    ends with all of them at one and a sum below c.
    """
    H = basis.H if hasattr(basis, "H") else np.asarray(basis)
    H = np.array(H, dtype=np.float64)
    if c < 1:
        raise ValueError("target column weight c must be >= 1")
    m = H.shape[0]
    sums = H.sum(axis=0)
    zero = sums <= 0
    H[:, zero] = 1.0
    sums[zero] = m
    P = c * H / sums
    for _ in range(max_rounds):
        over = P > 1.0
        if not over.any() or P.max() <= 1.0 + 1e-12:
            break
        excess = np.where(over, P - 1.0, 0.0).sum(axis=0)
        P[over] = 1.0
        free = (P > 0.0) & (P < 1.0)
        mass = np.where(free, P, 0.0).sum(axis=0)
        ok = (excess > 0) & (mass > 0)
        factor = np.ones_like(mass)
        factor[ok] = 1.0 + excess[ok] / mass[ok]
        P = np.where(free, P * factor, P)
    np.minimum(P, 1.0, out=P)
    return SamplingBasis(P, c)


def sample_columns(probs: SamplingBasis, seed: int) -> np.ndarray:
    """Independent Bernoulli draws, one per entry; returns a boolean (m, d) array."""
    P = probs.H if isinstance(probs, SamplingBasis) else np.asarray(probs)
    rng = np.random.default_rng(seed)
    return rng.random(P.shape) < P
