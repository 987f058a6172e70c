"""Label interaction graph, vertex separators and hierarchical label blocks.

Separators come from BFS level structures rooted at a pseudo-peripheral node:
every interior level, trimmed to the nodes that actually touch the next (or
previous) level, is a candidate, and the one with the smallest
``|S| / min(|below|, |above|)`` that respects the balance bound wins.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .codec import DecodeResult, rank_labels
from .dataset_io import CooccurrenceMatrix


class SeparatorError(RuntimeError):
    pass


@dataclass(frozen=True)
class LabelGraph:
    adjacency: sp.csr_matrix  # symmetric boolean, empty diagonal, sorted indices

    @property
    def d(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def edges(self) -> list[tuple[int, int]]:
        coo = sp.triu(self.adjacency, k=1).tocoo()
        return sorted(zip(coo.row.tolist(), coo.col.tolist()))

    def subgraph(self, nodes: np.ndarray) -> sp.csr_matrix:
        return self.adjacency[nodes][:, nodes].tocsr()


def build_label_graph(cooc) -> LabelGraph:
    m = cooc.matrix if isinstance(cooc, CooccurrenceMatrix) else sp.csr_matrix(cooc)
    a = sp.csr_matrix(m, dtype=np.float64)
    a.setdiag(0)
    a.eliminate_zeros()
    a = (a != 0).astype(np.int8).tocsr()
    a.sort_indices()
    return LabelGraph(a)


def graph_from_edges(d: int, edges) -> LabelGraph:
    edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    r = np.concatenate([edges[:, 0], edges[:, 1]])
    c = np.concatenate([edges[:, 1], edges[:, 0]])
    return build_label_graph(sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(d, d)))


def _bfs_levels(adj: sp.csr_matrix, src: int) -> np.ndarray:
    n = adj.shape[0]
    level = np.full(n, -1, dtype=np.int64)
    level[src] = 0
    frontier = np.array([src])
    depth = 0
    while len(frontier):
        depth += 1
        nxt = np.unique(np.concatenate([adj.indices[adj.indptr[u]:adj.indptr[u + 1]] for u in frontier]))
        nxt = nxt[level[nxt] < 0]
        level[nxt] = depth
        frontier = nxt
    return level


def pseudo_peripheral_node(adj: sp.csr_matrix) -> tuple[int, np.ndarray]:
    deg = np.diff(adj.indptr)
    node = int(np.argmin(deg))
    level = _bfs_levels(adj, node)
    ecc = level.max()
    while True:
        last = np.flatnonzero(level == ecc)
        cand = int(last[np.argmin(deg[last])])
        cand_level = _bfs_levels(adj, cand)
        if cand_level.max() <= ecc:
            return node, level
        node, level, ecc = cand, cand_level, cand_level.max()


def _separator_local(adj: sp.csr_matrix, balance: float):
    n = adj.shape[0]
    _, level = pseudo_peripheral_node(adj)
    h = int(level.max())
    limit = (1.0 - balance) * n
    best = None
    for i in range(1, h):
        layer = np.flatnonzero(level == i)
        nb_level = [level[adj.indices[adj.indptr[u]:adj.indptr[u + 1]]] for u in layer]
        touches_up = np.array([np.any(lv == i + 1) for lv in nb_level])
        touches_down = np.array([np.any(lv == i - 1) for lv in nb_level])
        for sep_mask, rest_goes_below in ((touches_up, True), (touches_down, False)):
            sep = layer[sep_mask]
            rest = layer[~sep_mask]
            below = np.flatnonzero(level < i)
            above = np.flatnonzero(level > i)
            if rest_goes_below:
                below = np.union1d(below, rest)
            else:
                above = np.union1d(above, rest)
            if not len(below) or not len(above):
                continue
            if max(len(below), len(above)) > limit:
                continue
            score = (len(sep) / min(len(below), len(above)), abs(len(below) - len(above)), i)
            if best is None or score < best[0]:
                best = (score, sep, below, above)
    return best


def find_vertex_separator(g, balance: float = 0.25, nodes=None):
    """Vertex separator of a connected graph (or of the subgraph induced by ``nodes``).

    Returns ``(S, part_a, part_b)`` as sorted global label arrays. Raises
    SeparatorError when no level separator meets the balance bound, even after
    halving it once.
    """
    if not 0 < balance <= 0.5:
        raise ValueError("balance must be in (0, 0.5]")
    adj = g.adjacency if isinstance(g, LabelGraph) else sp.csr_matrix(g)
    nodes = np.arange(adj.shape[0]) if nodes is None else np.asarray(nodes, dtype=np.int64)
    sub = adj[nodes][:, nodes].tocsr() if len(nodes) != adj.shape[0] else adj
    if len(nodes) < 2:
        raise SeparatorError("graph needs at least two nodes")
    ncomp, _ = connected_components(sub, directed=False)
    if ncomp != 1:
        raise SeparatorError("graph is not connected")
    for bal in (balance, balance / 2):
        best = _separator_local(sub, bal)
        if best is not None:
            _, s, a, b = best
            return nodes[np.sort(s)], nodes[np.sort(a)], nodes[np.sort(b)]
    raise SeparatorError(f"no separator within balance {balance} (or {balance / 2})")


def is_separated(g: LabelGraph, s, part_a, part_b) -> bool:
    """True when no path avoiding S links part_a to part_b."""
    keep = np.setdiff1d(np.arange(g.d), s)
    sub = g.subgraph(keep)
    _, lab = connected_components(sub, directed=False)
    pos = {int(v): i for i, v in enumerate(keep)}
    ca = {lab[pos[int(v)]] for v in part_a}
    cb = {lab[pos[int(v)]] for v in part_b}
    return not (ca & cb)


@dataclass
class PartitionNode:
    nodes: np.ndarray
    separator: np.ndarray
    children: list = field(default_factory=list)
    depth: int = 0
    oversized: bool = False

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class HierPartition:
    d: int
    root: PartitionNode
    leaves: list  # arrays of labels (components C_i)
    blocks: list  # arrays of labels (C_i plus attached separator labels)
    separators: np.ndarray  # every separator label
    top_separator: np.ndarray
    permutation: np.ndarray
    oversized: list = field(default_factory=list)  # leaf indices larger than max_block

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def block_sizes(self) -> list[int]:
        return [len(b) for b in self.blocks]


def _components(adj: sp.csr_matrix, nodes: np.ndarray) -> list[np.ndarray]:
    sub = adj[nodes][:, nodes]
    ncomp, lab = connected_components(sub, directed=False)
    comps = [np.sort(nodes[lab == c]) for c in range(ncomp)]
    comps.sort(key=lambda c: int(c[0]))
    return comps


def hierarchical_partition(g: LabelGraph, max_block: int = 40000, max_depth: int = 20,
                           balance: float = 0.25, n_blocks: int | None = None) -> HierPartition:
    """Recursive split into label blocks: components first, then vertex separators.

    A connected piece larger than ``max_block`` is bisected by a separator
    until it fits or ``max_depth`` is reached; if no separator can be found the
    piece stays an (oversized) leaf. With ``n_blocks`` the leaves are then
    packed, largest first, into that many blocks.
    """
    if max_block < 2:
        raise ValueError("max_block must be >= 2")
    adj = g.adjacency
    sep_nodes: list[PartitionNode] = []

    def split(nodes, depth):
        comps = _components(adj, nodes)
        if len(comps) > 1:
            node = PartitionNode(nodes, np.empty(0, dtype=np.int64), depth=depth)
            node.children = [split_connected(c, depth + 1) for c in comps]
            return node
        return split_connected(nodes, depth)

    def split_connected(nodes, depth):
        if len(nodes) <= max_block:
            return PartitionNode(nodes, np.empty(0, dtype=np.int64), depth=depth)
        if depth >= max_depth:
            return PartitionNode(nodes, np.empty(0, dtype=np.int64), depth=depth, oversized=True)
        try:
            s, _, _ = find_vertex_separator(g, balance, nodes)
        except SeparatorError:
            return PartitionNode(nodes, np.empty(0, dtype=np.int64), depth=depth, oversized=True)
        node = PartitionNode(nodes, s, depth=depth)
        sep_nodes.append(node)
        rest = np.setdiff1d(nodes, s)
        child = split(rest, depth + 1)
        node.children = child.children if len(child.separator) == 0 and child.children else [child]
        return node

    root = split(np.arange(g.d), 0)

    leaves, leaf_nodes = [], []

    def collect(node):
        if node.is_leaf:
            leaves.append(node.nodes)
            leaf_nodes.append(node)
        for ch in node.children:
            collect(ch)

    collect(root)
    oversized = [i for i, nd in enumerate(leaf_nodes) if nd.oversized]

    groups = [[i] for i in range(len(leaves))]
    if n_blocks is not None and n_blocks < len(leaves):
        loads = [0] * n_blocks
        groups = [[] for _ in range(n_blocks)]
        for i in sorted(range(len(leaves)), key=lambda i: (-len(leaves[i]), int(leaves[i][0]))):
            b = min(range(n_blocks), key=lambda t: (loads[t], t))
            groups[b].append(i)
            loads[b] += len(leaves[i])
        groups = [sorted(gr) for gr in groups if gr]
        groups.sort(key=lambda gr: gr[0])
    block_core = [np.sort(np.concatenate([leaves[i] for i in gr])) for gr in groups]

    block_of = np.full(g.d, -1, dtype=np.int64)
    for b, core in enumerate(block_core):
        block_of[core] = b
    attached: list[set] = [set() for _ in block_core]
    # deepest separators first, so shallower ones can attach through them
    for node in sorted(sep_nodes, key=lambda nd: -nd.depth):
        under = {int(block_of[v]) for v in node.nodes if block_of[v] >= 0}
        for s in node.separator:
            nb = g.neighbors(int(s))
            targets = {int(block_of[v]) for v in nb if block_of[v] >= 0}
            targets |= {b for b in under if any(int(v) in attached[b] for v in nb)}
            targets &= under
            if not targets and under:
                targets = {min(under)}
            for b in targets:
                attached[b].add(int(s))
    blocks = [np.union1d(core, np.fromiter(sorted(att), dtype=np.int64, count=len(att)))
              for core, att in zip(block_core, attached)]

    seps_ordered = [nd.separator for nd in sorted(sep_nodes, key=lambda nd: -nd.depth)]
    separators = np.concatenate(seps_ordered) if seps_ordered else np.empty(0, dtype=np.int64)
    top = sep_nodes[0].separator if sep_nodes else np.empty(0, dtype=np.int64)
    permutation = np.concatenate([*leaves, separators]) if leaves else separators
    return HierPartition(g.d, root, leaves, blocks, np.sort(separators), top, permutation.astype(np.int64), oversized)


def check_partition(g: LabelGraph, hp: HierPartition) -> None:
    """Raise AssertionError if the partition invariants fail."""
    allnodes = np.concatenate([*hp.leaves, hp.separators]) if hp.leaves else hp.separators
    assert len(allnodes) == g.d and np.array_equal(np.sort(allnodes), np.arange(g.d)), "not a partition of V"
    assert np.array_equal(np.sort(hp.permutation), np.arange(g.d)), "permutation is not a bijection"
    leaf_of = np.full(g.d, -1)
    for i, leaf in enumerate(hp.leaves):
        leaf_of[leaf] = i
    coo = sp.triu(g.adjacency, k=1).tocoo()
    a, b = leaf_of[coo.row], leaf_of[coo.col]
    bad = (a >= 0) & (b >= 0) & (a != b)
    assert not bad.any(), "edge joins two different leaves"


def permuted_cooccurrence_coords(cooc, permutation) -> np.ndarray:
    """(row, col) coordinates of nonzeros of the symmetrically permuted matrix."""
    m = cooc.matrix if isinstance(cooc, CooccurrenceMatrix) else sp.csr_matrix(cooc)
    perm = np.asarray(permutation)
    pm = m[perm][:, perm].tocoo()
    order = np.lexsort((pm.col, pm.row))
    return np.stack([pm.row[order], pm.col[order]], axis=1)


@dataclass
class BlockPrediction:
    label_map: np.ndarray  # local index -> global label
    support: np.ndarray  # local indices
    scores: np.ndarray  # one local score per support entry
    d: int  # global label count


def combine_predictions(block_results: list, k: int, separators=(), d: int | None = None) -> DecodeResult:
    """Merge per-block predictions into one global top-k.

    Block scores are divided by the block's maximum score; a label present in
    q block label maps contributes each block's normalized score with weight
    1/q. Separator labels win exact ties; remaining ties go to the smaller index.
    """
    if not block_results:
        raise ValueError("no block results")
    dims = {br.d for br in block_results}
    if d is not None:
        dims.add(d)
    if len(dims) != 1:
        raise ValueError(f"blocks disagree on the global label count: {sorted(dims)}")
    d = dims.pop()
    q = np.zeros(d, dtype=np.int64)
    for br in block_results:
        if len(br.label_map) and br.label_map.max() >= d:
            raise ValueError("block label map exceeds the global label count")
        q[br.label_map] += 1
    total = np.zeros(d)
    predicted = np.zeros(d, dtype=bool)
    for br in block_results:
        if not len(br.support):
            continue
        s = np.asarray(br.scores, dtype=np.float64)
        top = s.max()
        norm = s / top if top > 0 else s
        glob = br.label_map[np.asarray(br.support)]
        np.add.at(total, glob, norm / q[glob])
        predicted[glob] = True
    bonus = np.zeros(d)
    bonus[np.asarray(separators, dtype=np.int64)] = 1.0
    cand = np.flatnonzero(predicted)
    order = rank_labels(d, [], np.where(predicted, total, -np.inf), bonus)
    chosen = np.sort(order[:min(k, len(cand))])
    return DecodeResult(chosen, "combined", total, bonus)


# -- files -------------------------------------------------------------------

def write_partition(hp: HierPartition, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for b, block in enumerate(hp.blocks):
            fh.write(f"{b}: " + " ".join(map(str, block)) + "\n")
        fh.write("S: " + " ".join(map(str, hp.separators)) + "\n")


def read_partition(path) -> tuple[list[np.ndarray], np.ndarray]:
    """Blocks and separator labels from a partition file."""
    blocks: dict[int, np.ndarray] = {}
    sep = np.empty(0, dtype=np.int64)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            key, _, rest = line.partition(":")
            vals = np.array([int(t) for t in rest.split()], dtype=np.int64)
            if key.strip() == "S":
                sep = vals
            else:
                try:
                    blocks[int(key)] = vals
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: bad block id {key!r}") from None
    return [blocks[b] for b in sorted(blocks)], sep


def write_permutation(perm, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in perm:
            fh.write(f"{int(v)}\n")


def write_spy_csv(coords: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col"])
        w.writerows(coords.tolist())


def partition_from_blocks(d: int, blocks: list, separators) -> HierPartition:
    """Wrap externally supplied blocks (e.g. read from a file) as a HierPartition."""
    separators = np.asarray(separators, dtype=np.int64)
    leaves = [np.setdiff1d(b, separators) for b in blocks]
    root = PartitionNode(np.arange(d), separators, [PartitionNode(l, np.empty(0, dtype=np.int64), depth=1) for l in leaves])
    perm = np.concatenate([*leaves, separators]) if leaves else separators
    return HierPartition(d, root, leaves, [np.asarray(b, dtype=np.int64) for b in blocks],
                         np.sort(separators), separators, perm.astype(np.int64), [])


def ensure_dir(path) -> None:
    os.makedirs(path, exist_ok=True)
