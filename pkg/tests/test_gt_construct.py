import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from mlgt import codec, symnmf
from mlgt.dataset_io import label_cooccurrence, make_dataset
from mlgt.gt_construct import (build_cw_for_m, build_cw_gt, build_nmf_gt, build_saffron, build_sp_gt,
                               column_weight_losses, correlation_metric, from_dense, identity, read_matrix_market,
                               regular_bipartite, repair_empty_columns, select_column_weight, signature_matrix,
                               write_matrix_market)
from mlgt.synthetic import make_clustered


def label_only(label_lists, d):
    return make_dataset(sp.csr_matrix((len(label_lists), 1)), label_lists, d)


# -- SP ----------------------------------------------------------------------

def test_sp_zero_probability_gives_zero_matrix():
    a = build_sp_gt(5, 7, 3, seed=0, prob=0.0)
    assert a.matrix.nnz == 0 and a.kind == "sp"


def test_sp_reproducible():
    a, b = build_sp_gt(2, 2, 1, seed=9), build_sp_gt(2, 2, 1, seed=9)
    assert np.array_equal(a.dense(), b.dense())


def test_sp_density_concentrates():
    a = build_sp_gt(120, 159, 5, seed=3)
    n = 120 * 159
    q = 1 / 6
    sigma = np.sqrt(q * (1 - q) / n)
    assert abs(a.matrix.nnz / n - q) <= 3 * sigma
    assert a.check_duality()


# -- CW ----------------------------------------------------------------------

def test_cw_single_submatrix():
    a = build_cw_gt(6, 1, 3, seed=0)
    assert [r.tolist() for r in a.rows] == [[0, 1, 2], [3, 4, 5]]


def test_cw_two_submatrices():
    a = build_cw_gt(6, 2, 3, seed=4)
    assert a.m == 4
    assert [r.tolist() for r in a.rows[:2]] == [[0, 1, 2], [3, 4, 5]]
    assert sorted(np.concatenate(a.rows[2:]).tolist()) == list(range(6))
    assert np.all(a.col_weights() == 2) and np.all(a.row_weights() == 3)
    assert a.check_duality()


def test_cw_requires_divisibility_unless_padded():
    with pytest.raises(ValueError):
        build_cw_gt(159, 3, 8, seed=0)
    a = build_cw_gt(159, 3, 8, seed=0, pad=True)
    assert (a.m, a.d) == (60, 159)
    assert np.all(a.col_weights() == 3)
    # padded to 160 every row holds 8 labels; dropping the pad column
    # leaves one row per submatrix with 7
    w = a.row_weights()
    assert np.sum(w == 8) == 57 and np.sum(w == 7) == 3
    assert a.params["d_padded"] == 160


@given(st.integers(1, 8), st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31))
def test_cw_constant_weights(blocks, r, c, seed):
    a = build_cw_gt(blocks * r, c, r, seed)
    assert a.m == blocks * c
    assert np.all(a.col_weights() == c) and np.all(a.row_weights() == r)
    # each submatrix has a single one per column
    dense = a.dense()
    for s in range(c):
        assert np.all(dense[s * blocks:(s + 1) * blocks].sum(axis=0) == 1)


def test_cw_for_m_fits_budget():
    a = build_cw_for_m(159, 120, 4, seed=1)
    assert a.m <= 120 and np.all(a.col_weights() == 4)


# -- signatures and SAFFRON --------------------------------------------------

def test_signature_columns():
    u = signature_matrix(4)
    assert u.b == 2 and u.m2 == 4
    assert u.column(2).tolist() == [1, 0, 0, 1]
    assert u.column(0).tolist() == [0, 0, 1, 1]


@given(st.integers(2, 300))
def test_signature_weights_and_distinct(d):
    u = signature_matrix(d)
    assert np.all(u.columns.sum(axis=0) == u.b)
    assert len({tuple(col) for col in u.columns.T}) == d
    assert all(np.array_equal(u.encode(j), u.column(j)) for j in range(0, d, max(1, d // 7)))


def test_saffron_small():
    a = build_saffron(4, 2, 1, seed=0)
    meta = a.saffron_meta
    assert (meta.m1, meta.m2, a.m) == (2, 4, 8)
    assert sorted(len(b) for b in meta.bin_edges) == [2, 2]
    u = signature_matrix(4)
    dense = a.dense()
    for i in range(2):
        block = dense[i * 4:(i + 1) * 4]
        for j in range(4):
            expected = u.column(j) if j in meta.bin_edges[i] else np.zeros(4)
            assert np.array_equal(block[:, j], expected)


def test_saffron_dimensions():
    a = build_saffron(1024, 64, 4, seed=2)
    assert a.m == 2 * 10 * 64 == 1280
    assert a.params["r"] == 64
    assert all(len(b) == 64 for b in a.saffron_meta.bin_edges)


@given(st.integers(2, 60), st.integers(1, 4), st.integers(0, 1000))
def test_saffron_bins_hold_full_signatures(d, c, seed):
    m1 = max(c, 2 * c + d // 4)
    a = build_saffron(d, m1, c, seed, strict=False)
    meta = a.saffron_meta
    u = signature_matrix(d)
    dense = a.dense()
    assert a.m == m1 * u.m2 and a.check_duality()
    for j in range(d):
        assert len(meta.label_bins[j]) == c
        for i in range(m1):
            col = dense[i * u.m2:(i + 1) * u.m2, j]
            member = j in meta.bin_edges[i]
            assert np.array_equal(col, u.column(j) if member else np.zeros(u.m2))
    degs = [len(b) for b in meta.bin_edges]
    assert max(degs) - min(degs) <= 1


def test_regular_bipartite_strict_rejects_unsatisfiable():
    with pytest.raises(ValueError):
        regular_bipartite(10, 4, 3, seed=0)
    pairs = regular_bipartite(12, 4, 3, seed=0)
    assert np.all(np.bincount(pairs.ravel(), minlength=4) == 9)


# -- NMF ---------------------------------------------------------------------

def test_nmf_probability_one_entries_are_deterministic():
    h = np.zeros((5, 3))
    h[0, 0] = h[4, 0] = 1.0
    h[:, 1:] = 1.0
    probs = symnmf.reweight_columns(h, 2)
    assert np.allclose(probs.H[:, 0], [1, 0, 0, 0, 1])
    for seed in range(10):
        a = symnmf.sample_columns(probs, seed)
        assert np.flatnonzero(a[:, 0]).tolist() == [0, 4]


def test_nmf_uniform_column_mean_weight():
    m, c = 40, 3
    probs = symnmf.reweight_columns(np.ones((m, 1)), c)
    weights = [symnmf.sample_columns(probs, s)[:, 0].sum() for s in range(200)]
    sigma = np.sqrt(m * (c / m) * (1 - c / m) / 200)
    assert abs(np.mean(weights) - c) <= 3 * sigma


def test_nmf_expected_column_weight_after_construction():
    ds = make_clustered(400, 50, 60, seed=3)
    basis = symnmf.symnmf_cd(label_cooccurrence(ds), 20, seed=0)
    probs = symnmf.reweight_columns(basis, 4)
    support = (basis.H > 0).sum(axis=0)
    assert np.allclose(probs.H.sum(axis=0)[support >= 4], 4) and probs.H.max() <= 1
    j = int(np.flatnonzero(support >= 4)[0])
    weights = np.array([symnmf.sample_columns(probs, s)[:, j].sum() for s in range(200)])
    p = probs.H[:, j]
    sigma = np.sqrt(np.sum(p * (1 - p)) / 200)
    assert abs(weights.mean() - 4) <= 3 * sigma + 1e-12


def test_nmf_build_has_no_empty_columns():
    ds = make_clustered(300, 40, 50, seed=5)
    a = build_nmf_gt(ds, 10, 2, seed=1)
    assert a.kind == "nmf" and (a.m, a.d) == (10, 50)
    assert np.all(a.col_weights() >= 1) and a.check_duality()


def test_nmf_rejects_bad_sizes():
    ds = make_clustered(100, 20, 12, seed=0)
    with pytest.raises(ValueError):
        build_nmf_gt(ds, 12, 2, seed=0)
    with pytest.raises(ValueError):
        build_nmf_gt(ds, 6, 6, seed=0)


def test_repair_uses_most_probable_group():
    a = np.zeros((3, 2), dtype=bool)
    a[1, 1] = True
    probs = np.array([[0.1, 0.5], [0.2, 0.5], [0.7, 0.0]])
    fixed = repair_empty_columns(a, probs)
    assert np.flatnonzero(fixed[:, 0]).tolist() == [2]
    assert np.flatnonzero(fixed[:, 1]).tolist() == [1]


# -- correlation metric ------------------------------------------------------

def test_phi_identity_is_zero():
    ds = label_only([[j] for j in range(6)], 6)
    assert correlation_metric(identity(6), ds) == pytest.approx(0.0, abs=1e-12)


def test_phi_zero_matrix():
    ds = label_only([[0, 1], [1, 2], [2]], 3)
    yy = label_cooccurrence(ds).dense()
    a = from_dense(np.zeros((4, 3)))
    assert correlation_metric(a, ds) == pytest.approx(np.linalg.norm(yy) / 3)


def test_phi_dimension_mismatch():
    with pytest.raises(ValueError):
        correlation_metric(identity(4), label_only([[0]], 3))


def test_phi_sparse_path_matches_dense(monkeypatch):
    from mlgt import gt_construct
    ds = make_clustered(200, 30, 40, seed=1)
    a = build_sp_gt(15, 40, 4, seed=2)
    dense = correlation_metric(a, ds)
    monkeypatch.setattr(gt_construct, "DENSE_LIMIT", 1)
    assert correlation_metric(a, ds) == pytest.approx(dense, rel=1e-12)


@given(st.integers(0, 2**31), st.randoms())
def test_phi_permutation_invariant(seed, rnd):
    rng = np.random.default_rng(seed)
    y = rng.random((15, 8)) < 0.3
    ds = label_only([np.flatnonzero(r).tolist() for r in y], 8)
    a = rng.random((5, 8)) < 0.4
    perm = np.array(rnd.sample(range(8), 8))
    lhs = correlation_metric(from_dense(a), ds)
    rhs = correlation_metric(from_dense(a[:, perm]), ds.restrict_labels(perm))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


# -- column weight selection -------------------------------------------------

def test_select_single_candidate():
    ds = label_only([[0], [1], [2, 3]], 4)
    assert select_column_weight(ds, [5], 3, lambda c, s: identity(4), seed=0) == 5


def test_select_avoids_all_ones():
    ds = label_only([[0], [1, 2], [3], [4, 5]], 6)

    def builder(c, seed):
        return identity(6) if c == 2 else from_dense(np.ones((3, 6)))

    assert select_column_weight(ds, [7, 2], 4, builder, seed=0) == 2


def test_select_skips_failures_and_reports_all_failed():
    ds = label_only([[0], [1]], 2)

    def builder(c, seed):
        if c == 1:
            raise ValueError("boom")
        return identity(2)

    losses = column_weight_losses(ds, [1, 2], 2, builder, seed=0)
    assert isinstance(losses[1], ValueError) and losses[2] == 0.0
    assert select_column_weight(ds, [1, 2], 2, builder, seed=0) == 2
    with pytest.raises(RuntimeError):
        select_column_weight(ds, [1], 2, builder, seed=0)


def test_select_matches_exhaustive_evaluation():
    ds = make_clustered(300, 30, 40, seed=8)
    cands = [2, 3, 4, 5]
    builder = lambda c, s: build_cw_for_m(40, 24, c, s)  # noqa: E731
    chosen = select_column_weight(ds, cands, 200, builder, seed=4)
    losses = column_weight_losses(ds, cands, 200, builder, seed=4)
    best = min(cands, key=lambda c: (losses[c], c))
    assert chosen == best


# -- serialization -----------------------------------------------------------

@pytest.mark.parametrize("build", [
    lambda: build_sp_gt(6, 9, 2, seed=1),
    lambda: build_cw_gt(8, 2, 4, seed=1),
    lambda: build_saffron(16, 8, 2, seed=1),
])
def test_matrix_market_roundtrip(tmp_path, build):
    a = build()
    path = tmp_path / "A.mtx"
    write_matrix_market(a, path)
    assert path.read_text().startswith("%%MatrixMarket matrix coordinate pattern general")
    b = read_matrix_market(path)
    assert b.kind == a.kind and np.array_equal(a.dense(), b.dense())
    if a.saffron_meta is not None:
        for x, y in zip(a.saffron_meta.bin_edges, b.saffron_meta.bin_edges):
            assert np.array_equal(x, y)


def test_identity():
    a = identity(5)
    assert a.m == a.d == 5 and np.array_equal(a.dense(), np.eye(5))


def test_brute_force_disjunct_identity():
    a = identity(5).dense().astype(bool)
    for j in range(5):
        for others in itertools.combinations([x for x in range(5) if x != j], 2):
            assert not np.all(a[:, j] <= a[:, list(others)].any(axis=1))
    assert codec.linear_decode(identity(5), codec.boolean_reduce(identity(5), [1, 3])).support.tolist() == [1, 3]
