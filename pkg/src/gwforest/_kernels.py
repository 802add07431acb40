"""Compiled inner loops for forest traversal and reduction.

All kernels take plain int64/float64 arrays and are independent of any law.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def dfs_preorder(roots, child_ptr, child_list, n):
    """Lexicographic (preorder) traversal of a planar forest.

    Returns ``(dfs, generation, tree_index, n_visited)``; ``dfs[r]`` is the id
    of the vertex of rank ``r``. Vertices never reached leave ``n_visited < n``.
    """
    dfs = np.full(n, -1, np.int64)
    generation = np.full(n, -1, np.int64)
    tree_index = np.zeros(n, np.int64)
    seen = np.zeros(n, np.bool_)
    stack = np.empty(n + 1, np.int64)
    rank = 0
    for t in range(roots.shape[0]):
        r = roots[t]
        if seen[r]:
            return dfs, generation, tree_index, -1
        top = 0
        stack[top] = r
        top += 1
        generation[r] = 0
        while top > 0:
            top -= 1
            v = stack[top]
            if seen[v]:
                return dfs, generation, tree_index, -1
            seen[v] = True
            if rank >= n:
                return dfs, generation, tree_index, -1
            dfs[rank] = v
            rank += 1
            tree_index[v] = t + 1
            lo = child_ptr[v]
            hi = child_ptr[v + 1]
            if top + (hi - lo) > n:
                return dfs, generation, tree_index, -1
            for j in range(hi - 1, lo - 1, -1):
                c = child_list[j]
                generation[c] = generation[v] + 1
                stack[top] = c
                top += 1
    return dfs, generation, tree_index, rank


@njit(cache=True)
def heights_along_dfs(dfs, parent, lengths):
    """h(u) summed along ancestral lines, returned indexed by dfs rank."""
    n = dfs.shape[0]
    h_by_id = np.zeros(parent.shape[0], np.float64)
    out = np.zeros(n, np.float64)
    for r in range(n):
        v = dfs[r]
        p = parent[v]
        if p >= 0:
            h_by_id[v] = h_by_id[p] + lengths[v]
        else:
            h_by_id[v] = 0.0
        out[r] = h_by_id[v]
    return out


@njit(cache=True)
def reduce_pass(dfs, parent, types, generation, x0):
    """One preorder pass of the optional-line reduction.

    For the vertex of rank r, ``t_parent[r]`` is the rank of its parent in the
    reduced tree (its nearest strict ancestor of type x0, or -1 for roots),
    ``ell[r]`` the generation gap to that ancestor and ``bit[r]`` is 1 for
    roots and type-x0 vertices.
    """
    n = dfs.shape[0]
    rank_of = np.empty(parent.shape[0], np.int64)
    head = np.empty(parent.shape[0], np.int64)  # nearest ancestor-or-self of type x0
    t_parent = np.full(n, -1, np.int64)
    ell = np.zeros(n, np.float64)
    bit = np.zeros(n, np.int8)
    for r in range(n):
        v = dfs[r]
        rank_of[v] = r
        p = parent[v]
        if p < 0:
            head[v] = v
            bit[r] = 1
            continue
        a = head[p]
        t_parent[r] = rank_of[a]
        ell[r] = generation[v] - generation[a]
        if types[v] == x0:
            head[v] = v
            bit[r] = 1
        else:
            head[v] = a
    return t_parent, ell, bit


@njit(cache=True)
def ancestor_minimum_check(S, parent_rank):
    """Brute-force check of ``u(k) is a strict ancestor of u(n)`` versus
    ``S_k == min_{k<=l<=n} S_l`` over all pairs k < n. Returns the first
    offending (k, n) or (-1, -1)."""
    n = parent_rank.shape[0]
    for m in range(n):
        running = S[m]
        for k in range(m - 1, -1, -1):
            is_min = S[k] <= running
            if S[k] < running:
                running = S[k]
            a = parent_rank[m]
            anc = False
            while a >= 0:
                if a == k:
                    anc = True
                    break
                if a < k:
                    break
                a = parent_rank[a]
            if anc != is_min:
                return k, m
    return -1, -1


@njit(cache=True)
def prefix_heights(parent_rank, lengths):
    """Row-wise weighted heights of dfs prefixes (parent_rank[l, r] < r)."""
    L, n = parent_rank.shape
    h = np.zeros((L, n), np.float64)
    for l in range(L):
        for r in range(n):
            p = parent_rank[l, r]
            if p >= 0:
                h[l, r] = h[l, p] + lengths[l, r]
    return h


@njit(cache=True)
def bfs_layout_dfs(parent, n_roots):
    """Preorder of the non-root vertices of a BFS-layout forest whose roots are
    ``0..n_roots-1``; also returns the root index of each listed vertex."""
    n = parent.shape[0]
    ptr = np.zeros(n + 1, np.int64)
    for v in range(n_roots, n):
        ptr[parent[v] + 1] += 1
    for v in range(n):
        ptr[v + 1] += ptr[v]
    # in BFS layout children of v are the contiguous ids ptr[v] + n_roots ...
    order = np.empty(n - n_roots, np.int64)
    owner = np.empty(n - n_roots, np.int64)
    stack = np.empty(n, np.int64)
    k = 0
    for r in range(n_roots):
        top = 0
        for c in range(ptr[r + 1] - 1, ptr[r] - 1, -1):
            stack[top] = c + n_roots
            top += 1
        while top > 0:
            top -= 1
            v = stack[top]
            order[k] = v
            owner[k] = r
            k += 1
            for c in range(ptr[v + 1] - 1, ptr[v] - 1, -1):
                stack[top] = c + n_roots
                top += 1
    return order, owner
