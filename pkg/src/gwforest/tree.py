"""Planar rooted forests in Ulam-Harris/Neveu order.

A :class:`PlanarForest` is an immutable arena: vertex ids are ``0..N-1``,
children are stored contiguously in birth (planar) order, and every derived
process is indexed by the lexicographic (depth-first) rank.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import ForestStructureError


@dataclass(frozen=True, eq=False)
class PlanarForest:
    parent: np.ndarray       # parent id, -1 for roots
    child_ptr: np.ndarray    # CSR offsets, length N+1
    child_list: np.ndarray   # children ids, planar order within each block
    roots: np.ndarray        # roots in tree order (1), (2), ...
    dfs: np.ndarray          # dfs[n] = id of u(n)
    rank: np.ndarray         # inverse permutation of dfs
    generation: np.ndarray   # |u| per id
    tree_index: np.ndarray   # 1-based tree index per id

    @property
    def n_nodes(self) -> int:
        return int(self.parent.shape[0])

    @property
    def n_trees(self) -> int:
        return int(self.roots.shape[0])

    def children(self, v: int) -> np.ndarray:
        return self.child_list[self.child_ptr[v]:self.child_ptr[v + 1]]

    def child_count(self) -> np.ndarray:
        return np.diff(self.child_ptr)

    def gamma(self) -> np.ndarray:
        """Tree index of u(n), indexed by dfs rank."""
        return self.tree_index[self.dfs]

    def generations_dfs(self) -> np.ndarray:
        return self.generation[self.dfs]

    def parent_rank(self) -> np.ndarray:
        """Rank of the parent of u(n) (-1 for roots), indexed by rank."""
        p = self.parent[self.dfs]
        out = np.full(p.shape[0], -1, np.int64)
        nz = p >= 0
        out[nz] = self.rank[p[nz]]
        return out

    def __len__(self) -> int:
        return self.n_nodes


def _finish(parent, child_ptr, child_list, roots) -> PlanarForest:
    n = parent.shape[0]
    dfs, gen, tidx, visited = _kernels.dfs_preorder(roots, child_ptr, child_list, n)
    if visited != n:
        raise ForestStructureError(
            "cycle detected: some vertices are not reachable from any root")
    rank = np.empty(n, np.int64)
    rank[dfs] = np.arange(n, dtype=np.int64)
    return PlanarForest(parent=parent, child_ptr=child_ptr, child_list=child_list,
                        roots=roots, dfs=dfs, rank=rank, generation=gen,
                        tree_index=tidx)


def build_forest(parents: Sequence[int], children: Optional[Sequence[Sequence[int]]] = None,
                 roots: Optional[Sequence[int]] = None) -> PlanarForest:
    """Build a forest from per-vertex parent references.

    ``parents[v]`` is the parent id of ``v`` or -1 for a root. ``children``,
    when given, fixes the planar order of each vertex's offspring and must be
    consistent with ``parents``; otherwise children are ordered by id. Roots
    are ordered by id unless ``roots`` is given.
    """
    parent = np.asarray(parents, dtype=np.int64).reshape(-1)
    n = parent.shape[0]
    if n == 0:
        raise ForestStructureError("empty forest")
    bad = (parent < -1) | (parent >= n)
    if bad.any():
        v = int(np.flatnonzero(bad)[0])
        raise ForestStructureError(f"orphan vertex {v}: parent {int(parent[v])} does not exist")
    if (parent == np.arange(n)).any():
        raise ForestStructureError("cycle detected: vertex is its own parent")

    if children is None:
        order = np.argsort(parent, kind="stable")
        order = order[parent[order] >= 0]
        counts = np.bincount(parent[parent >= 0], minlength=n)
        child_list = order.astype(np.int64)
    else:
        if len(children) != n:
            raise ForestStructureError("children sequence must have one entry per vertex")
        counts = np.array([len(c) for c in children], dtype=np.int64)
        flat = [int(c) for block in children for c in block]
        child_list = np.asarray(flat, dtype=np.int64)
        if child_list.size:
            if child_list.min() < 0 or child_list.max() >= n:
                raise ForestStructureError("child reference to a non-existent vertex")
            seen = np.bincount(child_list, minlength=n)
            if (seen > 1).any():
                v = int(np.flatnonzero(seen > 1)[0])
                raise ForestStructureError(f"duplicate child {v}")
            owner = np.repeat(np.arange(n), counts)
            mismatch = parent[child_list] != owner
            if mismatch.any():
                j = int(np.flatnonzero(mismatch)[0])
                raise ForestStructureError(
                    f"children of {int(owner[j])} list {int(child_list[j])} whose parent is "
                    f"{int(parent[child_list[j]])}")
        if child_list.size != int((parent >= 0).sum()):
            raise ForestStructureError("orphan vertex: parent does not list it as a child")
    child_ptr = np.zeros(n + 1, np.int64)
    np.cumsum(counts, out=child_ptr[1:])

    if roots is None:
        root_arr = np.flatnonzero(parent < 0).astype(np.int64)
    else:
        root_arr = np.asarray(roots, dtype=np.int64)
        if set(root_arr.tolist()) != set(np.flatnonzero(parent < 0).tolist()):
            raise ForestStructureError("roots do not match vertices without parent")
    if root_arr.size == 0:
        raise ForestStructureError("cycle detected: no root")
    return _finish(parent, child_ptr, child_list, root_arr)


def forest_from_bfs(parent: np.ndarray) -> PlanarForest:
    """Fast constructor for sampled forests.

    ``parent`` must list vertices so that each vertex's children are
    contiguous, appear after it, and blocks are in increasing parent order
    (the layout produced by generation-wise sampling).
    """
    parent = np.ascontiguousarray(parent, dtype=np.int64)
    n = parent.shape[0]
    nonroot = parent >= 0
    counts = np.bincount(parent[nonroot], minlength=n)
    child_ptr = np.zeros(n + 1, np.int64)
    np.cumsum(counts, out=child_ptr[1:])
    child_list = np.flatnonzero(nonroot).astype(np.int64)
    if child_list.size and (np.diff(parent[child_list]) < 0).any():
        return build_forest(parent)
    return _finish(parent, child_ptr, child_list, np.flatnonzero(~nonroot).astype(np.int64))


def forest_from_parents(parent: np.ndarray) -> PlanarForest:
    """Forest from a parent array; siblings keep their order of appearance."""
    parent = np.ascontiguousarray(parent, dtype=np.int64)
    n = parent.shape[0]
    if ((parent < -1) | (parent >= n)).any():
        raise ForestStructureError("parent id out of range")
    nonroot = parent >= 0
    counts = np.bincount(parent[nonroot], minlength=n)
    child_ptr = np.zeros(n + 1, np.int64)
    np.cumsum(counts, out=child_ptr[1:])
    kids = np.flatnonzero(nonroot)
    child_list = kids[np.argsort(parent[kids], kind="stable")].astype(np.int64)
    return _finish(parent, child_ptr, child_list, np.flatnonzero(~nonroot).astype(np.int64))


def forest_from_dfs_parents(parent_rank: np.ndarray) -> PlanarForest:
    """Forest whose ids already are dfs ranks (``parent_rank[r] < r``)."""
    parent = np.ascontiguousarray(parent_rank, dtype=np.int64)
    r = np.arange(parent.shape[0])
    if ((parent >= r) | (parent < -1)).any():
        raise ForestStructureError("parent rank must precede child rank")
    return forest_from_parents(parent)


def weighted_heights(forest: PlanarForest, lengths: Optional[np.ndarray] = None) -> np.ndarray:
    """h(u(n)) for every rank n; generations when ``lengths`` is None."""
    if lengths is None:
        return forest.generation[forest.dfs].astype(np.float64)
    lengths = np.asarray(lengths, dtype=np.float64)
    if lengths.shape[0] != forest.n_nodes:
        raise ValueError("one length per vertex required")
    nonroot = forest.parent >= 0
    if np.isnan(lengths[nonroot]).any():
        v = int(np.flatnonzero(nonroot & np.isnan(lengths))[0])
        raise ValueError(f"missing length for non-root vertex {v}")
    if (lengths[nonroot] < 0).any():
        raise ValueError("lengths must be non-negative")
    return _kernels.heights_along_dfs(forest.dfs, forest.parent, np.nan_to_num(lengths))


def lukasiewicz(forest: PlanarForest, child_count: Optional[np.ndarray] = None) -> np.ndarray:
    """S_0 = 0, S_{k+1} = S_k + child_count(u(k)) - 1, length N + 1."""
    if child_count is None:
        child_count = forest.child_count()
    child_count = np.asarray(child_count, dtype=np.int64)
    if child_count.shape[0] != forest.n_nodes:
        raise ValueError("one child count per vertex required")
    if (child_count < 0).any():
        raise ValueError("child counts must be non-negative")
    S = np.zeros(forest.n_nodes + 1, np.int64)
    np.cumsum(child_count[forest.dfs] - 1, out=S[1:])
    return S


def ancestor_minimum_violation(S: np.ndarray, parent_rank: np.ndarray):
    """First pair (k, n) breaking ``u(k) ancestor of u(n) <=> S_k = min S[k..n]``.

    Quadratic brute force; returns None when the identity holds everywhere.
    """
    k, n = _kernels.ancestor_minimum_check(np.asarray(S, np.int64),
                                           np.asarray(parent_rank, np.int64))
    return None if k < 0 else (int(k), int(n))


CSV_COLUMNS = ("node_id", "parent_id", "tree_index", "type_tag", "length")


def write_forest_csv(path, forest: PlanarForest, type_tag=None, lengths=None, extra=None) -> None:
    """Rows in dfs order; ``extra`` maps additional column names to per-id arrays."""
    n = forest.n_nodes
    tags = np.ones(n, np.int64) if type_tag is None else np.asarray(type_tag)
    lens = np.where(forest.parent >= 0, 1.0, 0.0) if lengths is None else np.asarray(lengths, float)
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(CSV_COLUMNS) + list(extra))
        for v in forest.dfs.tolist():
            row = [v, int(forest.parent[v]), int(forest.tree_index[v]), int(tags[v]), repr(float(lens[v]))]
            row += [int(col[v]) for col in extra.values()]
            w.writerow(row)


def read_forest_csv(path):
    """Inverse of :func:`write_forest_csv`: ``(forest, type_tag, lengths, extra)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if tuple(header[:5]) != CSV_COLUMNS:
        raise ForestStructureError(f"unexpected CSV header {header[:5]}")
    ids = np.array([int(r[0]) for r in body])
    n = ids.shape[0]
    if sorted(ids.tolist()) != list(range(n)):
        raise ForestStructureError("node ids must be 0..N-1")
    parent = np.empty(n, np.int64)
    tag = np.empty(n, np.int64)
    length = np.empty(n, np.float64)
    tidx = np.empty(n, np.int64)
    extra = {h: np.empty(n, np.int64) for h in header[5:]}
    children = [[] for _ in range(n)]
    root_order = []
    for r in body:
        v = int(r[0])
        parent[v], tidx[v], tag[v], length[v] = int(r[1]), int(r[2]), int(r[3]), float(r[4])
        for j, h in enumerate(header[5:]):
            extra[h][v] = int(r[5 + j])
        if parent[v] >= 0:
            children[parent[v]].append(v)   # dfs row order == planar order
        else:
            root_order.append(v)
    forest = build_forest(parent, children=children, roots=root_order)
    return forest, tag, length, extra
