"""Size-biased trees with a distinguished spine, and dual checks of many-to-one identities."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy import stats

from . import explore, seeding
from .errors import SpineConstructionError, TruncationError, TruncationLeakError
from .leafed import DEFAULT_HARD_CAP, LeafedLaw, TableLeafedLaw
from .multitype import MultitypeLaw, TableMultitypeLaw, type_lookup
from .tree import PlanarForest, forest_from_parents

DEFAULT_REJECTION_CAP = 64.0


# ---------------------------------------------------------------- size-biased offspring

class _Tilted:
    """Offspring sampler reweighted by a non-negative score of the progeny.

    Exact when the law can size-bias itself or has an enumerator; otherwise
    rejection from the original law with acceptance score/cap, where scores
    above the cap are accepted with probability one and counted.
    """

    def __init__(self, cap: float):
        self.cap = float(cap)
        self.violations = 0
        self.exact = True


class MonotypeTilt(_Tilted):
    def __init__(self, law: LeafedLaw, cap: float = DEFAULT_REJECTION_CAP):
        super().__init__(cap)
        self.law = law
        self.table = None
        if hasattr(law, "sample_size_biased"):
            return
        out = law.enumerate()
        if out is not None:
            w = [(p * sum(b for b, _ in ch), ch) for p, ch in out]
            tot = sum(x for x, _ in w)
            if tot <= 0:
                raise SpineConstructionError("law never has a type-1 child; size-biasing impossible")
            self.table = TableLeafedLaw([(x / tot, ch) for x, ch in w if x > 0])
        else:
            self.exact = False

    def sample(self, k, rng):
        if hasattr(self.law, "sample_size_biased"):
            return self.law.sample_size_biased(k, rng)
        if self.table is not None:
            return self.table.sample_children(k, rng)
        return _reject(lambda kk: self.law.sample_children(kk, rng),
                       lambda c, bits, lens, own: np.bincount(own, weights=bits, minlength=c.shape[0]),
                       k, rng, self)


class MultitypeTilt(_Tilted):
    def __init__(self, law: MultitypeLaw, b_types, b_values, cap: float = DEFAULT_REJECTION_CAP):
        super().__init__(cap)
        self.law = law
        self.b_types = np.asarray(b_types, np.int64)
        self.b_values = np.asarray(b_values, np.float64)
        if (self.b_values <= 0).any():
            raise ValueError("b must be positive")
        self.tables: Dict[int, Optional[TableMultitypeLaw]] = {}
        self.exact = law.has_enumerator

    def b(self, codes):
        v = type_lookup(self.b_types, self.b_values, codes)
        if np.isnan(v).any():
            bad = int(np.asarray(codes)[np.isnan(v)][0])
            raise TruncationLeakError(f"no b value for type {bad}; widen the window")
        return v

    def _table(self, x):
        if x not in self.tables:
            out = self.law.enumerate(x)
            if out is None:
                self.tables[x] = None
            else:
                w = [(p * float(self.b(np.array(ch, np.int64)).sum()) if ch else 0.0, ch)
                     for p, ch in out]
                tot = sum(v for v, _ in w)
                if tot <= 0:
                    raise SpineConstructionError(
                        f"offspring of type {x} carry no b-mass; cannot choose the next spine vertex")
                self.tables[x] = TableMultitypeLaw({x: [(v / tot, ch) for v, ch in w if v > 0]})
        return self.tables[x]

    def sample(self, types, rng):
        types = np.asarray(types, np.int64)
        if self.law.has_enumerator:
            for x in np.unique(types).tolist():
                self._table(x)
            counts = np.zeros(types.shape[0], np.int64)
            parts = []
            for x in np.unique(types).tolist():
                sel = np.flatnonzero(types == x)
                c, ch = self.tables[x].sample_children(types[sel], rng)
                counts[sel] = c
                parts.append((sel, c, ch))
            starts = np.cumsum(counts) - counts
            out = np.empty(int(counts.sum()), np.int64)
            for sel, c, ch in parts:
                offs = np.repeat(np.cumsum(c) - c, c)
                out[np.repeat(starts[sel], c) + np.arange(ch.size) - offs] = ch
            return counts, out
        bx = self.b(types)

        def score(sel, c, ch, own):
            return np.bincount(own, weights=self.b(ch), minlength=c.shape[0]) / bx[sel]

        return _reject_indexed(lambda sel: self.law.sample_children(types[sel], rng), score,
                               types.shape[0], rng, self)


def _reject(propose, score, k, rng, tilt):
    """Rejection sampling for leafed progeny (counts, bits, lengths)."""
    done_c = [None] * k
    done_b = [None] * k
    done_l = [None] * k
    todo = np.arange(k)
    while todo.size:
        c, bits, lens = propose(todo.size)
        own = np.repeat(np.arange(todo.size), c)
        s = score(c, bits, lens, own)
        tilt.violations += int((s > tilt.cap).sum())
        acc = rng.random(todo.size) * tilt.cap < s
        starts = np.cumsum(c) - c
        for j in np.flatnonzero(acc).tolist():
            i = todo[j]
            sl = slice(starts[j], starts[j] + c[j])
            done_c[i], done_b[i], done_l[i] = c[j], bits[sl], lens[sl]
        todo = todo[~acc]
    counts = np.array(done_c, np.int64)
    return (counts, np.concatenate(done_b).astype(np.int8) if k else np.zeros(0, np.int8),
            np.concatenate(done_l) if k else np.zeros(0))


def _reject_indexed(propose, score, k, rng, tilt):
    done_c = [None] * k
    done_t = [None] * k
    todo = np.arange(k)
    while todo.size:
        c, ch = propose(todo)
        own = np.repeat(np.arange(todo.size), c)
        s = score(todo, c, ch, own)
        tilt.violations += int((s > tilt.cap).sum())
        acc = rng.random(todo.size) * tilt.cap < s
        starts = np.cumsum(c) - c
        for j in np.flatnonzero(acc).tolist():
            i = todo[j]
            done_c[i], done_t[i] = c[j], ch[starts[j]:starts[j] + c[j]]
        todo = todo[~acc]
    return np.array(done_c, np.int64), (np.concatenate(done_t) if k else np.zeros(0, np.int64))


# ---------------------------------------------------------------- spine trees

@dataclass(frozen=True, eq=False)
class SpineTree:
    forest: PlanarForest
    spine: np.ndarray                  # w_0, w_1, ... (vertex ids)
    types: Optional[np.ndarray] = None   # multitype codes per id
    bit: Optional[np.ndarray] = None     # leafed type bits per id
    length: Optional[np.ndarray] = None  # leafed lengths per id
    spine_types: Optional[np.ndarray] = None
    exact: bool = True
    cap_violations: int = 0

    def spine_lengths(self):
        return None if self.length is None else self.length[self.spine]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "node_id", "type", "ell"])
            for k, v in enumerate(self.spine.tolist()):
                t = int(self.types[v]) if self.types is not None else int(self.bit[v])
                ell = float(self.length[v]) if self.length is not None else (0.0 if k == 0 else 1.0)
                w.writerow([k, v, t, repr(ell)])


class _Builder:
    """Append-only arena; children of one vertex are appended contiguously."""

    def __init__(self, labels: Dict[str, np.ndarray]):
        self.parent = [np.array([-1], np.int64)]
        self.labels = {k: [np.atleast_1d(v)] for k, v in labels.items()}
        self.size = 1

    def add(self, parent: np.ndarray, labels: Dict[str, np.ndarray]) -> np.ndarray:
        m = parent.shape[0]
        ids = np.arange(self.size, self.size + m, dtype=np.int64)
        self.parent.append(parent)
        for k in self.labels:
            self.labels[k].append(labels[k])
        self.size += m
        return ids

    def add_subtree(self, at: int, p_local, lab_local):
        # local vertex 0 is the already-present vertex ``at``
        m = p_local.shape[0] - 1
        if m <= 0:
            return
        base = self.size - 1
        p = p_local[1:]
        self.add(np.where(p == 0, at, p + base), {k: v[1:] for k, v in lab_local.items()})

    def finish(self):
        parent = np.concatenate(self.parent)
        return forest_from_parents(parent), {k: np.concatenate(v) for k, v in self.labels.items()}


def sample_spine_monotype(law: LeafedLaw, depth: int, seed: int, offspine: bool = True,
                          hard_cap: int = DEFAULT_HARD_CAP,
                          rejection_cap: float = DEFAULT_REJECTION_CAP) -> SpineTree:
    """Size-biased leafed tree with ``depth`` spine generations.

    Spine vertices reproduce by the size-biased law and pass the spine to a
    uniform type-1 child; other type-1 vertices grow ordinary subtrees (when
    ``offspine``). The last spine vertex is left childless.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    rng = seeding.rng(seed)
    tilt = MonotypeTilt(law, rejection_cap)
    bld = _Builder({"bit": np.int8(1), "length": np.float64(0.0)})
    spine = [0]
    for _ in range(depth):
        w = spine[-1]
        c, bits, lens = tilt.sample(1, rng)
        ids = bld.add(np.full(int(c[0]), w, np.int64), {"bit": bits, "length": lens})
        ones = ids[bits == 1]
        nxt = int(ones[rng.integers(ones.size)])
        spine.append(nxt)
        if offspine:
            for v, ln in zip(ones.tolist(), lens[bits == 1].tolist()):
                if v == nxt:
                    continue
                try:
                    p, lab = explore.grow_tree(law.children_fn, law.fertile_fn,
                                               {"bit": np.int8(1), "length": np.float64(ln)},
                                               rng, hard_cap - bld.size)
                except TruncationError as err:
                    raise TruncationError(f"off-spine subtree breached the hard cap of {hard_cap}",
                                          n_nodes=err.n_nodes) from None
                bld.add_subtree(v, p, lab)
    fo, lab = bld.finish()
    return SpineTree(fo, np.array(spine, np.int64), bit=lab["bit"], length=lab["length"],
                     exact=tilt.exact, cap_violations=tilt.violations)


def sample_spine_multitype(law: MultitypeLaw, b_values, x0: int, depth: int, seed: int,
                           b_types=None, offspine: bool = True,
                           hard_cap: int = DEFAULT_HARD_CAP,
                           rejection_cap: float = DEFAULT_REJECTION_CAP) -> SpineTree:
    """Size-biased multitype tree: spine offspring tilted by the sum of b over
    children, next spine vertex chosen with probability proportional to b."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    b_values = np.asarray(b_values, np.float64)
    b_types = np.arange(b_values.shape[0]) if b_types is None else np.asarray(b_types, np.int64)
    rng = seeding.rng(seed)
    tilt = MultitypeTilt(law, b_types, b_values, rejection_cap)
    bld = _Builder({"type": np.int64(x0)})
    spine = [0]
    stypes = [int(x0)]
    for _ in range(depth):
        w, x = spine[-1], stypes[-1]
        c, ch = tilt.sample(np.array([x], np.int64), rng)
        bw = tilt.b(ch) if ch.size else np.zeros(0)
        if bw.sum() <= 0:
            raise SpineConstructionError(
                f"offspring of type {x} carry no b-mass; cannot choose the next spine vertex")
        ids = bld.add(np.full(ch.size, w, np.int64), {"type": ch})
        j = int(np.searchsorted(np.cumsum(bw) / bw.sum(), rng.random(), side="right"))
        j = min(j, ch.size - 1)
        spine.append(int(ids[j]))
        stypes.append(int(ch[j]))
        if offspine:
            for i, (v, t) in enumerate(zip(ids.tolist(), ch.tolist())):
                if i == j:
                    continue
                try:
                    p, lab = explore.grow_tree(law.children_fn, None, {"type": np.int64(t)},
                                               rng, hard_cap - bld.size)
                except TruncationError as err:
                    raise TruncationError(f"off-spine subtree breached the hard cap of {hard_cap}",
                                          n_nodes=err.n_nodes) from None
                bld.add_subtree(v, p, lab)
    fo, lab = bld.finish()
    return SpineTree(fo, np.array(spine, np.int64), types=lab["type"],
                     spine_types=np.array(stypes, np.int64), exact=tilt.exact,
                     cap_violations=tilt.violations)


# ---------------------------------------------------------------- vectorized spine paths

def spine_length_paths(law: LeafedLaw, n: int, R: int, rng, tilt: Optional[MonotypeTilt] = None):
    """(R, n+1) array of l(w_0), ..., l(w_n) for R independent spines."""
    tilt = tilt or MonotypeTilt(law)
    out = np.zeros((R, n + 1))
    for k in range(1, n + 1):
        c, bits, lens = tilt.sample(R, rng)
        ones_per = np.bincount(np.repeat(np.arange(R), c), weights=bits, minlength=R).astype(np.int64)
        pick = (rng.random(R) * ones_per).astype(np.int64)
        l1 = lens[bits == 1]
        first = np.cumsum(ones_per) - ones_per
        out[:, k] = l1[first + pick]
    return out


def spine_type_paths(tilt: MultitypeTilt, x0: int, n: int, R: int, rng):
    """(R, n+1) array of phi_0 = x0, phi_1, ..., phi_n."""
    out = np.empty((R, n + 1), np.int64)
    out[:, 0] = x0
    for k in range(1, n + 1):
        c, ch = tilt.sample(out[:, k - 1], rng)
        if (c == 0).any():
            raise SpineConstructionError("size-biased progeny is empty")
        bw = tilt.b(ch)
        own = np.repeat(np.arange(R), c)
        tot = np.bincount(own, weights=bw, minlength=R)
        if (tot <= 0).any():
            bad = int(out[np.flatnonzero(tot <= 0)[0], k - 1])
            raise SpineConstructionError(
                f"offspring of type {bad} carry no b-mass; cannot choose the next spine vertex")
        cum = np.cumsum(bw)
        start = np.cumsum(c) - c
        base = np.where(start > 0, cum[np.maximum(start - 1, 0)], 0.0)
        target = base + rng.random(R) * tot
        j = np.searchsorted(cum, target, side="right")
        j = np.minimum(np.maximum(j, start), start + c - 1)
        out[:, k] = ch[j]
    return out


# ---------------------------------------------------------------- many-to-one

@dataclass
class MTOReport:
    lhs: float
    rhs: float
    se_lhs: float
    se_rhs: float
    z: float
    passed: bool
    n: int
    R: int
    exact_size_bias: bool = True
    cap_violations: int = 0
    runtime: float = 0.0

    @property
    def se(self):
        return math.hypot(self.se_lhs, self.se_rhs)

    def to_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "se": self.se, "se_lhs": self.se_lhs,
                "se_rhs": self.se_rhs, "z": self.z, "pass": self.passed, "n": self.n, "R": self.R,
                "exact_size_bias": self.exact_size_bias, "cap_violations": self.cap_violations}


def _forest_side_monotype(law: LeafedLaw, g, n, upto, R, rng):
    """Per replicate: sum over type-1 vertices u at generation n (or 1..n) of g(l(u_0..u_k))."""
    owner = np.arange(R, dtype=np.int64)
    paths = np.zeros((R, 1))
    acc = np.zeros(R)
    for k in range(1, n + 1):
        if owner.size == 0:
            break
        c, bits, lens = law.sample_children(owner.size, rng)
        par = np.repeat(np.arange(owner.size), c)
        keep = bits == 1
        par, lens = par[keep], lens[keep]
        owner = owner[par]
        paths = np.column_stack([paths[par], lens])
        if upto or k == n:
            acc += np.bincount(owner, weights=g(paths), minlength=R)
    return acc


def _forest_side_multitype(law: MultitypeLaw, x0, g, n, upto, R, rng):
    owner = np.arange(R, dtype=np.int64)
    types = np.full(R, x0, np.int64)
    paths = np.zeros((R, 0), np.int64)
    acc = np.zeros(R)
    for k in range(1, n + 1):
        if owner.size == 0:
            break
        c, ch = law.sample_children(types, rng)
        par = np.repeat(np.arange(owner.size), c)
        owner = owner[par]
        paths = np.column_stack([paths[par], ch])
        types = ch
        if upto or k == n:
            acc += np.bincount(owner, weights=g(paths), minlength=R)
    return acc


def _ones(paths):
    return np.ones(paths.shape[0])


def verify_many_to_one(law, b_values=None, x0: Optional[int] = None, g: Optional[Callable] = None,
                       n: int = 3, R: int = 10**5, seed: int = 0, b_types=None,
                       upto: bool = False, z_threshold: float = 3.0, chunk: int = 10**4,
                       threads: Optional[int] = None,
                       rejection_cap: float = DEFAULT_REJECTION_CAP) -> MTOReport:
    """Estimate both sides of a many-to-one identity by independent simulations.

    Monotype (``b_values`` None, leafed law): g receives an (m, k+1) array of
    edge lengths along the ancestral line of type-1 generation-k vertices.
    Multitype: g receives an (m, k) array of types of u_1..u_k, and the spine
    side is weighted by b_{x0}/b_{phi_k}. With ``upto`` the functional is
    summed over generations 1..n. ``g`` must be bounded.
    """
    t0 = time.perf_counter()
    g = g or _ones
    if n < 1:
        raise ValueError("n must be >= 1")
    if b_values is None:
        if not isinstance(law, LeafedLaw):
            raise TypeError("monotype check needs a leafed law")

        def lhs_chunk(i, size, rng):
            return _forest_side_monotype(law, g, n, upto, size, rng)

        tilts = []

        def rhs_chunk(i, size, rng):
            tilt = MonotypeTilt(law, rejection_cap)
            tilts.append(tilt)
            paths = spine_length_paths(law, n, size, rng, tilt)
            if upto:
                return sum(g(paths[:, :k + 1]) for k in range(1, n + 1))
            return g(paths)
    else:
        if x0 is None:
            raise ValueError("x0 is required for the multitype identity")
        b_values = np.asarray(b_values, float)
        b_types = np.arange(b_values.shape[0]) if b_types is None else np.asarray(b_types, np.int64)
        tilts = []

        def lhs_chunk(i, size, rng):
            return _forest_side_multitype(law, x0, g, n, upto, size, rng)

        def rhs_chunk(i, size, rng):
            tilt = MultitypeTilt(law, b_types, b_values, rejection_cap)
            tilts.append(tilt)
            paths = spine_type_paths(tilt, x0, n, size, rng)
            bx0 = float(tilt.b(np.array([x0]))[0])
            ks = range(1, n + 1) if upto else [n]
            return sum(bx0 / tilt.b(paths[:, k]) * g(paths[:, 1:k + 1]) for k in ks)

    lhs = np.concatenate(seeding.map_chunks(lhs_chunk, R, chunk, seed, threads, prefix=(0,)))
    rhs = np.concatenate(seeding.map_chunks(rhs_chunk, R, chunk, seed, threads, prefix=(1,)))
    se_l = float(lhs.std(ddof=1) / math.sqrt(R))
    se_r = float(rhs.std(ddof=1) / math.sqrt(R))
    diff = float(lhs.mean() - rhs.mean())
    se = math.hypot(se_l, se_r)
    z = diff / se if se > 0 else (0.0 if diff == 0 else math.copysign(math.inf, diff))
    return MTOReport(lhs=float(lhs.mean()), rhs=float(rhs.mean()), se_lhs=se_l, se_rhs=se_r,
                     z=z, passed=bool(abs(z) < z_threshold), n=int(n), R=int(R),
                     exact_size_bias=all(t.exact for t in tilts),
                     cap_violations=sum(t.violations for t in tilts),
                     runtime=time.perf_counter() - t0)


# ---------------------------------------------------------------- chain diagnostics

def transition_chi2(chain: np.ndarray, p: np.ndarray, types, min_expected: float = 5.0):
    """Pearson chi-square of observed transitions against kernel rows.

    ``chain`` is one path or an (R, n+1) array of independent paths. Cells
    with expected count below ``min_expected`` are pooled per row.
    Returns ``(statistic, dof, p_value)``.
    """
    types = np.asarray(types, np.int64)
    chain = np.atleast_2d(np.asarray(chain, np.int64))
    pos = np.full(int(max(types.max(), chain.max())) + 1, -1, np.int64)
    pos[types] = np.arange(types.shape[0])
    src = pos[chain[:, :-1].ravel()]
    dst = pos[chain[:, 1:].ravel()]
    if (src < 0).any() or (dst < 0).any():
        raise TruncationLeakError("chain visits a type outside the kernel window")
    K = types.shape[0]
    counts = np.zeros((K, K))
    np.add.at(counts, (src, dst), 1.0)
    stat, dof = 0.0, 0
    for i in range(K):
        n_i = counts[i].sum()
        if n_i == 0:
            continue
        exp = n_i * p[i] / p[i].sum()
        obs = counts[i]
        if (obs[exp == 0] > 0).any():
            return math.inf, 0, 0.0
        big = exp >= min_expected
        e = list(exp[big])
        o = list(obs[big])
        small_e = exp[~big & (exp > 0)].sum()
        if small_e > 0:
            e.append(small_e)
            o.append(obs[~big & (exp > 0)].sum())
        if len(e) < 2:
            continue
        e, o = np.array(e), np.array(o)
        stat += float(((o - e) ** 2 / e).sum())
        dof += len(e) - 1
    pval = float(stats.chi2.sf(stat, dof)) if dof > 0 else 1.0
    return stat, dof, pval


def return_times(chain: np.ndarray, x: int) -> np.ndarray:
    """Gaps between successive visits to state x (within each path of a 2-d array)."""
    chain = np.atleast_2d(np.asarray(chain))
    return np.concatenate([np.diff(np.flatnonzero(row == x)) for row in chain])
