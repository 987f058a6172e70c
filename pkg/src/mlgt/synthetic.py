"""Synthetic multilabel data with clustered, learnable label structure."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .dataset_io import Dataset, make_dataset


def make_clustered(
    n: int,
    p: int,
    d: int,
    n_topics: int = 8,
    mean_labels: float = 2.5,
    cross_topic: float = 0.1,
    words_per_label: int = 12,
    noise_words: int = 6,
    seed: int = 0,
) -> Dataset:
    """Labels drawn from topic clusters; features are noisy unions of label word sets.

    ``cross_topic=0`` gives an exactly block-diagonal co-occurrence structure
    with one block per topic.
    """
    rng = np.random.default_rng(seed)
    topic_of = np.arange(d) % n_topics
    topics = [np.flatnonzero(topic_of == t) for t in range(n_topics)]
    popularity = 1.0 / np.arange(1, d + 1) ** 0.7
    popularity = popularity[rng.permutation(d)]

    topic_words = np.array_split(rng.permutation(p), n_topics)
    prototypes = []
    for j in range(d):
        pool = topic_words[topic_of[j]]
        own = rng.choice(pool, size=min(len(pool), words_per_label // 2), replace=False)
        anywhere = rng.choice(p, size=min(p, words_per_label - len(own)), replace=False)
        prototypes.append(np.union1d(own, anywhere))

    label_lists = []
    rows, cols = [], []
    for i in range(n):
        t = rng.integers(n_topics)
        members = topics[t]
        w = popularity[members] / popularity[members].sum()
        k = min(len(members), 1 + rng.poisson(max(mean_labels - 1.0, 0.0)))
        labs = set(rng.choice(members, size=k, replace=False, p=w).tolist())
        if cross_topic > 0 and rng.random() < cross_topic:
            labs.add(int(rng.integers(d)))
        labs = sorted(labs)
        label_lists.append(labs)
        words = set()
        for j in labs:
            keep = rng.random(len(prototypes[j])) < 0.6
            words.update(prototypes[j][keep].tolist())
        words.update(rng.integers(0, p, size=noise_words).tolist())
        words = sorted(words)
        rows.extend([i] * len(words))
        cols.extend(words)
    x = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, p))
    return make_dataset(x, label_lists, d)


def make_block_diagonal(n: int, p: int, block_sizes: list[int], mean_labels: float = 2.5, seed: int = 0) -> Dataset:
    """Labels confined to disjoint contiguous blocks (no cross-block co-occurrence)."""
    rng = np.random.default_rng(seed)
    d = int(sum(block_sizes))
    starts = np.concatenate([[0], np.cumsum(block_sizes)])
    words = np.array_split(rng.permutation(p), len(block_sizes))
    label_words = [rng.choice(words[b], size=8, replace=False)
                   for b in range(len(block_sizes)) for _ in range(block_sizes[b])]
    label_lists, rows, cols = [], [], []
    for i in range(n):
        b = rng.integers(len(block_sizes))
        size = block_sizes[b]
        k = min(size, 1 + rng.poisson(max(mean_labels - 1.0, 0.0)))
        labs = sorted((starts[b] + rng.choice(size, size=k, replace=False)).tolist())
        label_lists.append(labs)
        ws = set(rng.integers(0, p, size=3).tolist())
        for j in labs:
            ws.update(label_words[j][rng.random(8) < 0.7].tolist())
        ws = sorted(ws)
        rows.extend([i] * len(ws))
        cols.extend(ws)
    x = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, p))
    return make_dataset(x, label_lists, d)
