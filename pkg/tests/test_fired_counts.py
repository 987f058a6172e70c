"""Expected group hits of on- and off-support labels under NMF sampling."""
import numpy as np

from mlgt import codec, symnmf
from mlgt.dataset_io import label_cooccurrence
from mlgt.gt_construct import build_nmf_gt, repair_empty_columns
from mlgt.synthetic import make_clustered

from oracles import fired_counts_mc, off_support_bound, off_support_moments

TRIALS = 500


def _setup(c=3, m=20):
    ds = make_clustered(800, 100, 60, n_topics=4, seed=11)
    basis = symnmf.symnmf_cd(label_cooccurrence(ds), m, seed=2)
    probs = symnmf.reweight_columns(basis, c).H
    full = np.flatnonzero(np.isclose(probs.sum(axis=0), c))
    y = full[[0, len(full) // 2, -1]]
    return ds, basis, probs, y


def test_realized_b_equals_column_weight():
    ds, basis, probs, y = _setup()
    for seed in range(20):
        a = build_nmf_gt(ds, 20, 3, seed, basis=basis)
        res = codec.topk_score_decode(a, codec.boolean_reduce(a, y), 3)
        assert np.array_equal(res.scores[y], a.col_weights()[y])


def test_on_support_mean_is_c():
    _, _, probs, y = _setup()
    b = fired_counts_mc(probs, y, TRIALS, seed=0, repair=repair_empty_columns)
    mean, se = b[:, y].mean(axis=0), b[:, y].std(axis=0, ddof=1) / np.sqrt(TRIALS)
    assert np.all(np.abs(mean - 3) <= 3 * se + 1e-12)


def test_off_support_mean():
    _, _, probs, y = _setup()
    b = fired_counts_mc(probs, y, TRIALS, seed=1)
    off = np.setdiff1d(np.arange(probs.shape[1]), y)
    mean, se = b[:, off].mean(axis=0), b[:, off].std(axis=0, ddof=1) / np.sqrt(TRIALS)
    exact, var = off_support_moments(probs, y)
    # four sigma per label keeps the family-wise false alarm rate small over ~60 labels
    assert np.all(np.abs(mean - exact[off]) <= 4 * np.sqrt(var[off] / TRIALS) + 1e-12)
    assert np.all(mean <= off_support_bound(probs, y) + 3 * se)
