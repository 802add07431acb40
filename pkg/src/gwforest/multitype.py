"""Multitype Galton-Watson laws and forests over non-negative integer type codes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import explore, seeding
from .errors import TruncationError
from .leafed import DEFAULT_HARD_CAP
from .tree import PlanarForest, forest_from_bfs, write_forest_csv

Enumeration = List[Tuple[float, Tuple[int, ...]]]


class MultitypeLaw:
    """Per-type offspring law; types are non-negative integers.

    ``sample_children(types, rng)`` draws the progeny of a whole batch of
    vertices; ``enumerate(x)`` returns the exact outcome list of type ``x`` or
    None when unavailable.
    """

    name = "multitype"

    def sample_children(self, types: np.ndarray, rng: np.random.Generator):
        raise NotImplementedError

    def enumerate(self, x: int) -> Optional[Enumeration]:
        return None

    @property
    def has_enumerator(self) -> bool:
        return False

    def to_spec(self) -> dict:
        raise NotImplementedError

    def children_fn(self, labels, rng):
        counts, child = self.sample_children(labels["type"], rng)
        return counts, {"type": child}

    fertile_fn = None


class TableMultitypeLaw(MultitypeLaw):
    """Finitely many types, each with a finite outcome list."""

    name = "table"

    def __init__(self, rules: Dict[int, Sequence[Tuple[float, Sequence[int]]]]):
        self.rules: Dict[int, Enumeration] = {}
        for x, outs in rules.items():
            x = int(x)
            if x < 0:
                raise ValueError("type codes must be non-negative")
            probs = np.array([float(p) for p, _ in outs])
            if probs.size == 0 or (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-9:
                raise ValueError(f"probabilities of type {x} must sum to 1")
            self.rules[x] = [(float(p), tuple(int(c) for c in ch)) for p, ch in outs]
            if any(c < 0 for _, ch in self.rules[x] for c in ch):
                raise ValueError("type codes must be non-negative")
        self._tables = {}
        for x, outs in self.rules.items():
            cum = np.cumsum([p for p, _ in outs])
            cum[-1] = 1.0
            lens = np.array([len(ch) for _, ch in outs], np.int64)
            ptr = np.concatenate([[0], np.cumsum(lens)])
            flat = np.array([c for _, ch in outs for c in ch], np.int64)
            self._tables[x] = (cum, lens, ptr, flat)

    @property
    def has_enumerator(self):
        return True

    def enumerate(self, x):
        return list(self.rules[int(x)]) if int(x) in self.rules else None

    def sample_children(self, types, rng):
        types = np.asarray(types, np.int64)
        k = types.shape[0]
        counts = np.zeros(k, np.int64)
        u = rng.random(k)
        chosen = np.zeros(k, np.int64)
        for x in np.unique(types).tolist():
            if x not in self._tables:
                raise KeyError(f"no offspring rule for type {x}")
            sel = types == x
            cum, lens, _, _ = self._tables[x]
            idx = np.minimum(np.searchsorted(cum, u[sel], side="right"), len(lens) - 1)
            chosen[sel] = idx
            counts[sel] = lens[idx]
        m = int(counts.sum())
        out = np.empty(m, np.int64)
        starts = np.cumsum(counts) - counts
        for x in np.unique(types).tolist():
            sel = np.flatnonzero(types == x)
            _, lens, ptr, flat = self._tables[x]
            c = counts[sel]
            tot = int(c.sum())
            if tot == 0:
                continue
            offs = np.repeat(np.cumsum(c) - c, c)
            j = np.arange(tot) - offs
            out[np.repeat(starts[sel], c) + j] = flat[np.repeat(ptr[chosen[sel]], c) + j]
        return counts, out

    def to_spec(self):
        return {"kind": "multitype", "types": "nonneg-int",
                "rules": [{"type": x, "offspring": [{"p": p, "children": list(ch)} for p, ch in outs]}
                          for x, outs in sorted(self.rules.items())]}


class CallableMultitypeLaw(MultitypeLaw):
    """Per-vertex sampler ``f(x, rng) -> sequence of child types`` (slow path)."""

    name = "callable"

    def __init__(self, sampler: Callable, enumerator: Optional[Callable] = None):
        self.sampler = sampler
        self.enumerator = enumerator

    @property
    def has_enumerator(self):
        return self.enumerator is not None

    def enumerate(self, x):
        return None if self.enumerator is None else self.enumerator(int(x))

    def sample_children(self, types, rng):
        counts = np.zeros(len(types), np.int64)
        flat = []
        for i, x in enumerate(np.asarray(types).tolist()):
            ch = list(self.sampler(int(x), rng))
            counts[i] = len(ch)
            flat.extend(int(c) for c in ch)
        return counts, np.array(flat, np.int64)

    def to_spec(self):
        return {"kind": "callable"}


@dataclass(frozen=True, eq=False)
class MultitypeForest:
    forest: PlanarForest
    types: np.ndarray   # per id
    x0: int

    @property
    def n_nodes(self):
        return self.forest.n_nodes

    def types_dfs(self):
        return self.types[self.forest.dfs]


def _to_multitype(parent, labels, x0) -> MultitypeForest:
    return MultitypeForest(forest_from_bfs(parent), labels["type"].astype(np.int64), int(x0))


def sample_multitype_forest(law: MultitypeLaw, x0: int, vertex_budget: int, seed: int,
                            hard_cap: int = DEFAULT_HARD_CAP) -> MultitypeForest:
    """i.i.d. trees rooted at type ``x0`` until ``vertex_budget`` vertices."""
    rng = seeding.rng(seed)
    root = {"type": np.int64(x0)}
    try:
        parent, labels = explore.sample_forest_arrays(
            law.children_fn, None, root, vertex_budget, rng, hard_cap)
    except TruncationError as err:
        p, lab = err.partial
        err.partial = _to_multitype(p, lab, x0)
        raise
    return _to_multitype(parent, labels, x0)


def type_lookup(types: np.ndarray, values: np.ndarray, codes: np.ndarray,
                fill: float = np.nan) -> np.ndarray:
    """values[position of code in types]; ``fill`` for codes not retained."""
    types = np.asarray(types, np.int64)
    codes = np.asarray(codes, np.int64)
    size = int(max(types.max(initial=0), codes.max(initial=0))) + 1
    dense = np.full(size, fill, dtype=np.float64)
    dense[types] = values
    return dense[codes]


def additive_martingale(f: MultitypeForest, b_types: np.ndarray, b_values: np.ndarray):
    """W_n = sum of b over generation-n vertices, per component tree.

    Returns ``(W, leak_flag)`` with ``W`` of shape (n_trees, max_generation+1);
    ``leak_flag`` is True when some vertex type has no b value (counted as 0).
    """
    fo = f.forest
    b = type_lookup(b_types, b_values, f.types)
    leak = bool(np.isnan(b).any())
    b = np.nan_to_num(b)
    G = int(fo.generation.max()) + 1
    W = np.zeros((fo.n_trees, G))
    np.add.at(W, (fo.tree_index - 1, fo.generation), b)
    return W, leak


def write_multitype_csv(path, f: MultitypeForest, extra=None) -> None:
    write_forest_csv(path, f.forest, type_tag=f.types, extra=extra)
