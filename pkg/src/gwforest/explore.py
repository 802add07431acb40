"""Law-agnostic growth engines.

A law is seen here only through two callables working on *label* dicts
(``{"type": array}`` for multitype laws, ``{"bit": ..., "length": ...}`` for
leafed laws):

* ``children_fn(labels, rng) -> (counts, child_labels)`` draws the progeny of
  every vertex in ``labels`` at once; ``child_labels`` is flat, grouped by
  parent in input order and in planar order inside each group.
* ``fertile_fn(labels) -> bool mask`` (or None: every vertex reproduces).
"""
from __future__ import annotations

from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .errors import TruncationError

Labels = Dict[str, np.ndarray]
ChildrenFn = Callable[[Labels, np.random.Generator], Tuple[np.ndarray, Labels]]


def _take(labels: Labels, idx) -> Labels:
    return {k: v[idx] for k, v in labels.items()}


def grow_tree(children_fn: ChildrenFn, fertile_fn, root: Dict[str, float],
              rng: np.random.Generator, cap: int):
    """Generation-wise sampling of one tree.

    Returns ``(parent, labels)`` in breadth-first layout (children contiguous,
    blocks in parent order). Raises :class:`TruncationError` with
    ``partial=(parent, labels)`` once more than ``cap`` vertices exist.
    """
    parents = [np.array([-1], np.int64)]
    chunks = {k: [np.array([v])] for k, v in root.items()}
    frontier = {k: c[0] for k, c in chunks.items()}
    first = 0
    total = 1
    while True:
        size = next(iter(frontier.values())).shape[0]
        ids = np.arange(first, first + size, dtype=np.int64)
        if fertile_fn is not None:
            mask = fertile_fn(frontier)
            ids = ids[mask]
            frontier = _take(frontier, mask)
        if ids.size == 0:
            break
        counts, child = children_fn(frontier, rng)
        m = int(counts.sum())
        if m == 0:
            break
        parents.append(np.repeat(ids, counts))
        for k in chunks:
            chunks[k].append(child[k])
        first = total
        total += m
        frontier = child
        if total > cap:
            partial = (np.concatenate(parents), {k: np.concatenate(v) for k, v in chunks.items()})
            raise TruncationError(f"tree exceeded the hard cap of {cap} vertices",
                                  partial=partial, n_nodes=total)
    return np.concatenate(parents), {k: np.concatenate(v) for k, v in chunks.items()}


def sample_forest_arrays(children_fn: ChildrenFn, fertile_fn, root: Dict[str, float],
                         vertex_budget: int, rng: np.random.Generator, cap: int):
    """i.i.d. trees until at least ``vertex_budget`` vertices; last tree complete.

    On a cap breach the partial forest (earlier trees plus the truncated one)
    is attached to the error.
    """
    if vertex_budget < 1:
        raise ValueError("vertex_budget must be >= 1")
    parents, chunks = [], {k: [] for k in root}
    total = 0

    def assemble():
        return np.concatenate(parents), {k: np.concatenate(v) for k, v in chunks.items()}

    while total < vertex_budget:
        try:
            p, lab = grow_tree(children_fn, fertile_fn, root, rng, cap)
        except TruncationError as err:
            p, lab = err.partial
            parents.append(np.where(p >= 0, p + total, -1))
            for k in chunks:
                chunks[k].append(lab[k])
            err.partial = assemble()
            raise
        parents.append(np.where(p >= 0, p + total, -1))
        for k in chunks:
            chunks[k].append(lab[k])
        total += p.shape[0]
    return assemble()


def dfs_prefix(children_fn: ChildrenFn, fertile_fn, root: Dict[str, float], n_nodes: int,
               lanes: int, rng: np.random.Generator):
    """First ``n_nodes`` vertices, in lexicographic order, of ``lanes`` independent forests.

    The forests are explored in lockstep with one explicit stack per lane; a
    lane whose stack empties starts a new tree. Offspring are drawn when a
    vertex is visited, so no tree beyond the prefix is ever completed.

    Returns ``(parent_rank, labels, depth, tree_index)``, each of shape
    ``(lanes, n_nodes)``; ``parent_rank`` is -1 at roots.
    """
    L = int(lanes)
    width = 64
    stack = {k: np.zeros((L, width), dtype=np.asarray(v).dtype) for k, v in root.items()}
    s_parent = np.zeros((L, width), np.int64)
    s_depth = np.zeros((L, width), np.int64)
    top = np.zeros(L, np.int64)
    trees = np.zeros(L, np.int64)

    out = {k: np.empty((L, n_nodes), dtype=np.asarray(v).dtype) for k, v in root.items()}
    out_parent = np.empty((L, n_nodes), np.int64)
    out_depth = np.empty((L, n_nodes), np.int64)
    out_tree = np.empty((L, n_nodes), np.int64)
    lane_ids = np.arange(L)

    for k in range(n_nodes):
        empty = top == 0
        if empty.any():
            for key, v in root.items():
                stack[key][empty, 0] = v
            s_parent[empty, 0] = -1
            s_depth[empty, 0] = 0
            top[empty] = 1
            trees[empty] += 1
        top -= 1
        popped = {key: stack[key][lane_ids, top] for key in stack}
        for key in stack:
            out[key][:, k] = popped[key]
        out_parent[:, k] = s_parent[lane_ids, top]
        d = s_depth[lane_ids, top]
        out_depth[:, k] = d
        out_tree[:, k] = trees

        if fertile_fn is None:
            fl = lane_ids
        else:
            fl = lane_ids[fertile_fn(popped)]
        if fl.size == 0:
            continue
        counts, child = children_fn(_take(popped, fl), rng)
        m = int(counts.sum())
        if m == 0:
            continue
        c = np.zeros(L, np.int64)
        c[fl] = counts
        need = int((top + c).max())
        if need > width:
            grow = max(need, 2 * width) - width
            for key in stack:
                stack[key] = np.pad(stack[key], ((0, 0), (0, grow)))
            s_parent = np.pad(s_parent, ((0, 0), (0, grow)))
            s_depth = np.pad(s_depth, ((0, 0), (0, grow)))
            width += grow
        lane = np.repeat(fl, counts)
        offs = np.repeat(np.cumsum(counts) - counts, counts)
        j = np.arange(m) - offs
        pos = top[lane] + c[lane] - 1 - j   # first child ends on top of the stack
        for key in stack:
            stack[key][lane, pos] = child[key]
        s_parent[lane, pos] = k
        s_depth[lane, pos] = d[lane] + 1
        top += c
    return out_parent, out, out_depth, out_tree
