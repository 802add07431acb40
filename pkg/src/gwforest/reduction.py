"""Optional-line reduction of a multitype tree to a leafed tree with edge lengths.

Each vertex of type x0 (and each root) becomes a type-1 vertex whose children
are the members of its optional-line bush, listed in lexicographic order; a
vertex's length is its generation gap to its nearest strict ancestor of type
x0. The reduction keeps lexicographic ranks, so reduced vertex ids are the
ranks of the original forest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import _kernels
from .errors import TruncationError
from .leafed import LeafedForest, LeafedLaw, write_leafed_csv
from .multitype import MultitypeForest, MultitypeLaw
from .tree import forest_from_dfs_parents, weighted_heights


def optional_line(tree: MultitypeForest, u: int, y: int) -> Tuple[list, list]:
    """(B, L): descendants of u with no strict intermediate ancestor of type y,
    and those of them having type y. Both in lexicographic order."""
    fo = tree.forest
    if not 0 <= u < fo.n_nodes:
        raise IndexError(f"vertex {u} not in tree")
    B, L = [], []
    stack = list(fo.children(u)[::-1])
    while stack:
        v = int(stack.pop())
        B.append(v)
        if tree.types[v] == y:
            L.append(v)
        else:
            stack.extend(fo.children(v)[::-1].tolist())
    return B, L


@dataclass(frozen=True, eq=False)
class ReducedTree:
    """Reduced forest; vertex ``r`` of ``leafed`` is the rank-r vertex of the source."""

    leafed: LeafedForest
    correspondence: Optional[np.ndarray]   # source vertex id per reduced id
    x0: int


def reduce(tree: MultitypeForest, x0: Optional[int] = None,
           keep_correspondence: bool = True) -> ReducedTree:
    """Reduce every component tree with distinguished type ``x0`` (default: root type)."""
    fo = tree.forest
    types = np.asarray(tree.types, np.int64)
    x0 = int(tree.x0 if x0 is None else x0)
    root_types = types[fo.roots]
    if (root_types != x0).any():
        bad = int(root_types[root_types != x0][0])
        raise ValueError(f"root type {bad} differs from the distinguished type {x0}")
    t_parent, ell, bit = _kernels.reduce_pass(fo.dfs, fo.parent, types, fo.generation, x0)
    forest = forest_from_dfs_parents(t_parent)
    leafed = LeafedForest(forest, bit, ell)
    corr = fo.dfs.copy() if keep_correspondence else None
    return ReducedTree(leafed, corr, x0)


def verify_prop1(tree: MultitypeForest, x0: Optional[int] = None,
                 reduced: Optional[ReducedTree] = None):
    """Exact check that weighted dfs heights of the reduction equal source generations.

    Returns ``(ok, first_mismatch_rank)``; the rank is None when ok.
    """
    if reduced is None:
        reduced = reduce(tree, x0, keep_correspondence=False)
    lf = reduced.leafed
    h = weighted_heights(lf.forest, lf.length)
    g = tree.forest.generations_dfs().astype(np.float64)
    if h.shape != g.shape:
        return False, int(min(h.shape[0], g.shape[0]))
    bad = np.flatnonzero(h != g)
    if bad.size:
        return False, int(bad[0])
    return True, None


def reduced_params(a, b, eta2: float, x0: Optional[int] = None, types=None) -> dict:
    """Offspring parameters of the reduced leafed law.

    ``a``, ``b`` are either the scalars a_{x0}, b_{x0} or vectors indexed by
    ``types`` (default: positions) together with ``x0``.
    """
    if x0 is not None and np.ndim(a) > 0:
        idx = int(x0) if types is None else int(np.flatnonzero(np.asarray(types) == x0)[0])
        a, b = float(np.asarray(a)[idx]), float(np.asarray(b)[idx])
    a, b, eta2 = float(a), float(b), float(eta2)
    if not (a > 0 and b > 0):
        raise ValueError("a_x0 and b_x0 must be positive")
    if eta2 < 0:
        raise ValueError("eta^2 must be non-negative")
    return {"m": 1.0 / a, "mu": 1.0 / (a * b), "sigma2": eta2 / (a * b * b)}


def optional_line_counts(law: MultitypeLaw, x: int, y: int, R: int, rng: np.random.Generator,
                         cap: int = 10**9):
    """(N, Z) for R independent type-x roots: sizes of the bush B and of the line L of type y.

    Generation-wise over all replicates at once; raises TruncationError when
    more than ``cap`` vertices have been explored.
    """
    owner = np.arange(R, dtype=np.int64)
    types = np.full(R, int(x), np.int64)
    N = np.zeros(R, np.int64)
    Z = np.zeros(R, np.int64)
    total = 0
    while owner.size:
        counts, ch = law.sample_children(types, rng)
        if ch.size == 0:
            break
        own = np.repeat(owner, counts)
        N += np.bincount(own, minlength=R)
        hit = ch == y
        Z += np.bincount(own[hit], minlength=R)
        owner, types = own[~hit], ch[~hit]
        total += ch.size
        if total > cap:
            raise TruncationError(f"bush exploration exceeded {cap} vertices", n_nodes=total)
    return N, Z


class ReducedLeafedLaw(LeafedLaw):
    """Offspring law of the reduced tree, sampled by exploring bushes directly.

    A type-1 vertex's progeny is the optional-line bush of a fresh type-x0
    vertex: every bush member in lexicographic order, with bit 1 for members
    of type x0 and length equal to the generation gap.
    """

    name = "reduced"

    def __init__(self, law: MultitypeLaw, x0: int, cap: int = 10**8):
        self.law = law
        self.x0 = int(x0)
        self.cap = int(cap)
        self.declared = None

    def sample_children(self, k, rng):
        x0 = self.x0
        parents = [np.full(k, -1, np.int64)]
        types = [np.full(k, x0, np.int64)]
        gens = [np.zeros(k, np.int64)]
        ids = np.arange(k, dtype=np.int64)
        front = types[0]
        g = 0
        total = k
        while ids.size:
            counts, ch = self.law.sample_children(front, rng)
            m = ch.size
            if m == 0:
                break
            g += 1
            parents.append(np.repeat(ids, counts))
            types.append(ch)
            gens.append(np.full(m, g, np.int64))
            new_ids = np.arange(total, total + m, dtype=np.int64)
            total += m
            if total > self.cap:
                raise TruncationError(f"bush exploration exceeded {self.cap} vertices",
                                      n_nodes=total)
            go = ch != x0
            ids, front = new_ids[go], ch[go]
        parent = np.concatenate(parents)
        t = np.concatenate(types)
        gen = np.concatenate(gens)
        order, owner = _kernels.bfs_layout_dfs(parent, k)
        counts = np.bincount(owner, minlength=k).astype(np.int64)
        bits = (t[order] == x0).astype(np.int8)
        lengths = gen[order].astype(np.float64)
        return counts, bits, lengths

    def to_spec(self):
        return {"kind": "reduced", "x0": self.x0, "law": self.law.to_spec()}


def write_reduced_csv(path, rt: ReducedTree) -> None:
    extra = None if rt.correspondence is None else {"t_node_id": rt.correspondence}
    write_leafed_csv(path, rt.leafed, extra=extra)


def moment_summary(x: np.ndarray) -> dict:
    """Mean and variance with standard errors (variance SE from the fourth central moment)."""
    x = np.asarray(x, np.float64)
    R = x.shape[0]
    mean = float(x.mean())
    c = x - mean
    var = float(c @ c / (R - 1))
    m4 = float(np.mean(c ** 4))
    return {"R": R, "mean": mean, "mean_se": math.sqrt(var / R), "var": var,
            "var_se": math.sqrt(max(m4 - var * var, 0.0) / R)}
