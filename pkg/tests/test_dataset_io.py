import io
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from mlgt.dataset_io import (CooccurrenceMatrix, DatasetFormatError, IndexingConfig, dumps, label_cooccurrence,
                             make_dataset, parse_repo_format, subsample_split)


def parse(text, **kw):
    return parse_repo_format(io.StringIO(text), IndexingConfig(**kw) if kw else None)


@st.composite
def datasets(draw, max_n=12, max_p=6, max_d=7):
    n = draw(st.integers(0, max_n))
    p = draw(st.integers(1, max_p))
    d = draw(st.integers(1, max_d))
    labels = [sorted(draw(st.sets(st.integers(0, d - 1), max_size=d))) for _ in range(n)]
    dense = np.zeros((n, p))
    for i in range(n):
        for j in draw(st.sets(st.integers(0, p - 1), max_size=p)):
            dense[i, j] = draw(st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False))
    # explicit zeros are kept by the parser, so mark the pattern separately
    feats = sp.csr_matrix(dense)
    return make_dataset(feats, labels, d)


def test_parse_basic():
    ds = parse("2 3 2\n0 1:1.5\n0,1 2:2.0\n")
    assert (ds.n, ds.p, ds.d) == (2, 3, 2)
    assert ds.label_row(0).tolist() == [0]
    assert ds.label_row(1).tolist() == [0, 1]
    assert ds.features[0, 0] == 1.5 and ds.features[1, 1] == 2.0


def test_parse_stored_zero():
    ds = parse("1 1 1\n0 1:0.0\n")
    assert (ds.n, ds.p, ds.d) == (1, 1, 1)
    assert ds.features.nnz == 1 and ds.features.data[0] == 0.0


def test_parse_empty_label_list_and_crlf():
    ds = parse("2 2 3\r\n 1:1\r\n2 2:3\r\n")
    assert ds.label_row(0).tolist() == []
    assert ds.label_row(1).tolist() == [2]


def test_parse_one_indexed_labels():
    ds = parse("1 2 2\n1,2 1:1\n", labels_one_indexed=True)
    assert ds.label_row(0).tolist() == [0, 1]


@pytest.mark.parametrize("text", [
    "2 3 2\n0 1:1.5\n",  # too few rows
    "1 3 2\n0 1:1\n1 1:1\n",  # too many rows
    "1 3 2\n2 1:1\n",  # label out of range
    "1 3 2\n0 4:1\n",  # feature out of range
    "1 3 2\n0 1-1\n",  # malformed token
    "1 3 2\n0 1:nan\n",  # non-finite value
    "1 3 2\n0 1:inf\n",
    "1 3 2\n0,0 1:1\n",  # duplicate label
    "1 3\n0 1:1\n",  # bad header
])
def test_parse_errors(text):
    with pytest.raises(DatasetFormatError):
        parse(text)


def test_error_carries_line_number():
    with pytest.raises(DatasetFormatError) as err:
        parse("2 3 2\n0 1:1\n0 9:1\n")
    assert err.value.line == 3


@given(datasets())
def test_roundtrip(ds):
    assert parse(dumps(ds)) == ds
    cfg = IndexingConfig(labels_one_indexed=True, features_one_indexed=False)
    assert parse_repo_format(io.StringIO(dumps(ds, cfg)), cfg) == ds


def test_subsample_identity_and_determinism():
    ds = make_dataset(sp.identity(4, format="csr"), [[0], [1], [0, 1], []], 2)
    assert subsample_split(ds, 1.0, 3) == ds
    a, b = subsample_split(ds, 0.5, 7), subsample_split(ds, 0.5, 7)
    assert a.n == 2 and a == b


def test_subsample_size_matches_ceiling():
    n = 4880
    ds = make_dataset(sp.csr_matrix((n, 1)), [[0]] * n, 1)
    assert subsample_split(ds, 0.2, 0).n == math.ceil(0.2 * n) == 976


def test_subsample_preserves_order():
    ds = make_dataset(sp.csr_matrix(np.arange(1, 11, dtype=float)[:, None]), [[0]] * 10, 1)
    sub = subsample_split(ds, 0.3, 5)
    vals = sub.features.toarray().ravel()
    assert np.all(np.diff(vals) > 0)


@pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
def test_subsample_rejects_fraction(fraction):
    ds = make_dataset(sp.csr_matrix((3, 1)), [[0]] * 3, 1)
    with pytest.raises(ValueError):
        subsample_split(ds, fraction, 0)


def test_cooccurrence_small():
    ds = make_dataset(sp.csr_matrix((2, 1)), [[0, 1], [2]], 3)
    c = label_cooccurrence(ds)
    assert isinstance(c, CooccurrenceMatrix)
    dense = c.dense()
    assert dense[0, 0] == dense[1, 1] == dense[0, 1] == dense[2, 2] == 1
    assert dense[0, 2] == dense[1, 2] == 0
    rows, cols, vals = c.triples()
    assert list(zip(rows.tolist(), cols.tolist(), vals.tolist())) == [(0, 0, 1), (0, 1, 1), (1, 1, 1), (2, 2, 1)]


def test_cooccurrence_singletons_diagonal():
    ds = make_dataset(sp.csr_matrix((5, 1)), [[j] for j in range(5)], 5)
    assert np.array_equal(label_cooccurrence(ds).dense(), np.eye(5))


def test_cooccurrence_brute_force(rng):
    y = rng.random((50, 20)) < 0.2
    ds = make_dataset(sp.csr_matrix((50, 1)), [np.flatnonzero(r).tolist() for r in y], 20)
    expected = np.zeros((20, 20), dtype=int)
    for r in range(50):
        for i in range(20):
            for j in range(20):
                expected[i, j] += int(y[r, i] and y[r, j])
    assert np.array_equal(label_cooccurrence(ds).dense(), expected)


@given(datasets(), st.randoms())
def test_cooccurrence_permutation_equivariant(ds, rnd):
    perm = np.array(rnd.sample(range(ds.d), ds.d))
    permuted = ds.restrict_labels(perm)
    c = label_cooccurrence(ds).dense()
    cp = label_cooccurrence(permuted).dense()
    assert np.array_equal(cp, c[np.ix_(perm, perm)])
