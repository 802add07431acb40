"""Leafed Galton-Watson forests with edge lengths and their exploration processes.

Vertices carry a type bit (1: may reproduce, 0: sterile extra leaf) and the
length of the edge to their parent. Roots have bit 1 and length 0.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import explore, seeding
from .errors import TruncationError
from .tree import PlanarForest, forest_from_bfs, weighted_heights, write_forest_csv

DEFAULT_HARD_CAP = 10**8

Outcome = Tuple[Tuple[int, float], ...]


# ---------------------------------------------------------------- laws

class LeafedLaw:
    """Offspring law over finite sequences of (type bit, length).

    Subclasses implement :meth:`sample_children`; :meth:`enumerate` returns the
    exact outcome list when one is available.
    """

    name = "leafed"
    declared: Optional[Dict[str, float]] = None

    def sample_children(self, k: int, rng: np.random.Generator):
        """Progeny of ``k`` type-1 vertices: ``(counts, bits, lengths)``."""
        raise NotImplementedError

    def enumerate(self) -> Optional[List[Tuple[float, Outcome]]]:
        return None

    def max_length(self) -> Optional[float]:
        """Upper bound on edge lengths when known (bounded support)."""
        out = self.enumerate()
        if out is None:
            return None
        lens = [ln for _, ch in out for _, ln in ch]
        return max(lens) if lens else 0.0

    def to_spec(self) -> dict:
        raise NotImplementedError

    # adapters for the growth engines
    def children_fn(self, labels, rng):
        counts, bits, lengths = self.sample_children(labels["bit"].shape[0], rng)
        return counts, {"bit": bits, "length": lengths}

    @staticmethod
    def fertile_fn(labels):
        return labels["bit"] == 1

    root = {"bit": np.int8(1), "length": np.float64(0.0)}


class TableLeafedLaw(LeafedLaw):
    """Finitely supported law given by ``[(p, [(bit, length), ...]), ...]``."""

    name = "table"

    def __init__(self, outcomes: Sequence[Tuple[float, Sequence[Sequence[float]]]],
                 declared: Optional[Dict[str, float]] = None):
        probs = np.array([float(p) for p, _ in outcomes], dtype=np.float64)
        if probs.size == 0 or (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("outcome probabilities must be non-negative and sum to 1")
        self.outcomes: List[Tuple[float, Outcome]] = []
        for (p, ch) in outcomes:
            seq = tuple((int(b), float(l)) for b, l in ch)
            for b, l in seq:
                if b not in (0, 1):
                    raise ValueError("type bits must be 0 or 1")
                if not (l >= 0) or math.isinf(l):
                    raise ValueError("lengths must be finite and non-negative")
            self.outcomes.append((float(p), seq))
        self.probs = probs / probs.sum()
        self._cum = np.cumsum(self.probs)
        self._cum[-1] = 1.0
        lens = np.array([len(ch) for _, ch in self.outcomes], np.int64)
        self._len = lens
        self._ptr = np.concatenate([[0], np.cumsum(lens)])
        self._bits = np.array([b for _, ch in self.outcomes for b, _ in ch], np.int8)
        self._lengths = np.array([l for _, ch in self.outcomes for _, l in ch], np.float64)
        self.declared = declared

    def sample_children(self, k, rng):
        idx = np.searchsorted(self._cum, rng.random(k), side="right")
        idx = np.minimum(idx, len(self.outcomes) - 1)
        counts = self._len[idx]
        m = int(counts.sum())
        offs = np.repeat(np.cumsum(counts) - counts, counts)
        flat = np.repeat(self._ptr[idx], counts) + (np.arange(m) - offs)
        return counts, self._bits[flat], self._lengths[flat]

    def enumerate(self):
        return list(self.outcomes)

    def to_spec(self):
        return {"kind": "leafed",
                "offspring": [{"p": p, "children": [[b, l] for b, l in ch]}
                              for p, ch in self.outcomes]}


def _length_sampler(spec: dict):
    dist = spec.get("dist", "const")
    if dist == "const":
        v = float(spec.get("value", 1.0))
        return (lambda n, rng: np.full(n, v)), v
    if dist == "exp":
        mean = float(spec["mean"])
        return (lambda n, rng: rng.exponential(mean, n)), None
    if dist == "uniform":
        lo, hi = float(spec["low"]), float(spec["high"])
        return (lambda n, rng: rng.uniform(lo, hi, n)), hi
    if dist == "pareto":
        alpha, scale = float(spec["alpha"]), float(spec.get("scale", 1.0))
        # classical Pareto on [scale, inf)
        return (lambda n, rng: scale * (1.0 + rng.pareto(alpha, n))), None
    raise ValueError(f"unknown length distribution {dist!r}")


def _length_mean(spec: dict) -> float:
    dist = spec.get("dist", "const")
    if dist == "const":
        return float(spec.get("value", 1.0))
    if dist == "exp":
        return float(spec["mean"])
    if dist == "uniform":
        return 0.5 * (float(spec["low"]) + float(spec["high"]))
    if dist == "pareto":
        a, s = float(spec["alpha"]), float(spec.get("scale", 1.0))
        return s * a / (a - 1.0) if a > 1 else math.inf
    raise ValueError(dist)


class GeometricLeafedLaw(LeafedLaw):
    """Geometric number of type-1 children with independent marks.

    nu1 ~ Geometric on {0, 1, ...} with mean ``mean_type1``; an independent
    Poisson(``mean_type0``) number of type-0 children follows them. Lengths
    are i.i.d. per type from the given distribution specs.
    """

    name = "geometric"

    def __init__(self, mean_type1: float = 1.0, mean_type0: float = 0.0,
                 length1: Optional[dict] = None, length0: Optional[dict] = None):
        self.mean_type1 = float(mean_type1)
        self.mean_type0 = float(mean_type0)
        self.length1 = dict(length1 or {"dist": "const", "value": 1.0})
        self.length0 = dict(length0 or {"dist": "const", "value": 1.0})
        self._l1, self._max1 = _length_sampler(self.length1)
        self._l0, self._max0 = _length_sampler(self.length0)
        m1 = self.mean_type1
        self.declared = {
            "m": m1 + self.mean_type0,
            "mu": m1 * _length_mean(self.length1),
            "sigma2": m1 * (1.0 + m1),
        }

    def sample_children(self, k, rng):
        n1 = rng.geometric(1.0 / (1.0 + self.mean_type1), k) - 1
        return self._assemble(n1, k, rng)

    def sample_size_biased(self, k, rng):
        """Progeny reweighted by the number of type-1 children (exact).

        Size-biasing a geometric law on {0, 1, ...} gives 1 + NegBin(2, p);
        type-0 counts and lengths are independent of nu1 and stay unchanged.
        """
        if self.mean_type1 <= 0:
            raise ValueError("size-biasing needs a positive mean number of type-1 children")
        n1 = rng.negative_binomial(2, 1.0 / (1.0 + self.mean_type1), k) + 1
        return self._assemble(n1, k, rng)

    def _assemble(self, n1, k, rng):
        n0 = rng.poisson(self.mean_type0, k) if self.mean_type0 > 0 else np.zeros(k, np.int64)
        counts = (n1 + n0).astype(np.int64)
        m = int(counts.sum())
        offs = np.repeat(np.cumsum(counts) - counts, counts)
        j = np.arange(m) - offs
        is1 = j < np.repeat(n1, counts)
        bits = is1.astype(np.int8)
        lengths = np.empty(m)
        n_one = int(is1.sum())
        lengths[is1] = self._l1(n_one, rng)
        lengths[~is1] = self._l0(m - n_one, rng)
        return counts, bits, lengths

    def max_length(self):
        if self.mean_type0 > 0:
            if self._max1 is None or self._max0 is None:
                return None
            return max(self._max1, self._max0)
        return self._max1

    def to_spec(self):
        return {"kind": "builtin", "name": "geometric", "mean_type1": self.mean_type1,
                "mean_type0": self.mean_type0, "length1": self.length1, "length0": self.length0}


class CallableLeafedLaw(LeafedLaw):
    """Wraps a per-vertex sampler ``f(rng) -> [(bit, length), ...]`` (slow path)."""

    name = "callable"

    def __init__(self, sampler, declared=None):
        self.sampler = sampler
        self.declared = declared

    def sample_children(self, k, rng):
        counts = np.zeros(k, np.int64)
        bits, lengths = [], []
        for i in range(k):
            ch = list(self.sampler(rng))
            counts[i] = len(ch)
            for b, l in ch:
                bits.append(int(b))
                lengths.append(float(l))
        return counts, np.array(bits, np.int8), np.array(lengths, np.float64)

    def to_spec(self):
        return {"kind": "callable"}


# ---------------------------------------------------------------- forests

@dataclass(frozen=True, eq=False)
class LeafedForest:
    forest: PlanarForest
    bit: np.ndarray      # per id
    length: np.ndarray   # per id

    def __post_init__(self):
        if (self.forest.child_count()[self.bit == 0] > 0).any():
            raise ValueError("type-0 vertices must be sterile")
        roots = self.forest.roots
        if (self.bit[roots] != 1).any() or (self.length[roots] != 0).any():
            raise ValueError("roots must have type bit 1 and length 0")

    @property
    def n_nodes(self):
        return self.forest.n_nodes


def _to_leafed(parent, labels) -> LeafedForest:
    f = forest_from_bfs(parent)
    return LeafedForest(f, labels["bit"].astype(np.int8), labels["length"].astype(np.float64))


def sample_leafed_forest(law: LeafedLaw, vertex_budget: int, seed: int,
                         hard_cap: int = DEFAULT_HARD_CAP) -> LeafedForest:
    """Concatenate i.i.d. leafed trees until ``vertex_budget`` vertices are reached.

    The last tree is always complete. A single tree larger than ``hard_cap``
    raises :class:`TruncationError`; its ``partial`` attribute is the
    :class:`LeafedForest` built so far (truncated frontier left childless).
    """
    rng = seeding.rng(seed)
    try:
        parent, labels = explore.sample_forest_arrays(
            law.children_fn, law.fertile_fn, law.root, vertex_budget, rng, hard_cap)
    except TruncationError as err:
        p, lab = err.partial
        err.partial = _to_leafed(p, lab)
        raise
    return _to_leafed(parent, labels)


# ---------------------------------------------------------------- processes

@dataclass(frozen=True, eq=False)
class ProcessTrace:
    H_ell: np.ndarray   # h(u(n))
    H_one: np.ndarray   # |u1(k)|
    phi: np.ndarray     # n -> k
    psi: np.ndarray     # k -> n
    Gamma: np.ndarray   # tree index of u(n)
    node_id: np.ndarray  # u(n)

    def to_csv(self, path_vertices, path_type1) -> None:
        with open(path_vertices, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "node_id", "H_ell", "phi", "Gamma"])
            for n, (v, h, p, g) in enumerate(zip(self.node_id.tolist(), self.H_ell.tolist(),
                                                  self.phi.tolist(), self.Gamma.tolist())):
                w.writerow([n, v, repr(h), p, g])
        with open(path_type1, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "H_one", "psi"])
            for k, (h, p) in enumerate(zip(self.H_one.tolist(), self.psi.tolist())):
                w.writerow([k, h, p])


def exploration_processes(f: LeafedForest) -> ProcessTrace:
    forest = f.forest
    H_ell = weighted_heights(forest, f.length)
    bit_dfs = f.bit[forest.dfs]
    psi = np.flatnonzero(bit_dfs == 1).astype(np.int64)
    k_of_rank = np.cumsum(bit_dfs == 1) - 1
    gen = forest.generation[forest.dfs]
    H_one = gen[psi].astype(np.int64)
    prank = forest.parent_rank()
    phi = k_of_rank.copy()
    zero = bit_dfs == 0
    phi[zero] = k_of_rank[prank[zero]]
    return ProcessTrace(H_ell=H_ell, H_one=H_one, phi=phi.astype(np.int64), psi=psi,
                        Gamma=forest.gamma(), node_id=forest.dfs.copy())


# ---------------------------------------------------------------- parameters

@dataclass
class ParamEstimate:
    m: float
    mu: float
    sigma2: float
    mean_type1: float
    se_m: float = 0.0
    se_mu: float = 0.0
    se_sigma2: float = 0.0
    se_mean_type1: float = 0.0
    exact: bool = False
    n_samples: int = 0
    declared: Optional[Dict[str, float]] = None
    flags: List[str] = field(default_factory=list)

    def to_dict(self):
        return {k: getattr(self, k) for k in
                ("m", "mu", "sigma2", "mean_type1", "se_m", "se_mu", "se_sigma2",
                 "se_mean_type1", "exact", "n_samples", "declared", "flags")}


def _flags(mean1: float, sigma2: float) -> List[str]:
    flags = []
    if mean1 == 0.0:
        flags.append("subcritical-degenerate")
    if sigma2 == 0.0:
        flags.append("zero-variance")
    return flags


def offspring_moments_exact(law: LeafedLaw):
    """(m, mu, mean nu1, var nu1) from the enumerator."""
    out = law.enumerate()
    p = np.array([q for q, _ in out])
    nu = np.array([len(ch) for _, ch in out], float)
    nu1 = np.array([sum(1 for b, _ in ch if b == 1) for _, ch in out], float)
    lsum = np.array([sum(l for b, l in ch if b == 1) for _, ch in out], float)
    mean1 = float(p @ nu1)
    return float(p @ nu), float(p @ lsum), mean1, float(p @ (nu1 - mean1) ** 2)


def estimate_params(law: LeafedLaw, n_samples: int, seed: int) -> ParamEstimate:
    """m = E[nu], mu = E[sum of type-1 lengths], sigma2 = Var(nu1).

    Exact (zero standard errors) when the law has an enumerator; otherwise
    plug-in Monte Carlo with the unbiased variance estimator.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    if law.enumerate() is not None:
        m, mu, mean1, var1 = offspring_moments_exact(law)
        return ParamEstimate(m=m, mu=mu, sigma2=var1, mean_type1=mean1, exact=True,
                             declared=law.declared, flags=_flags(mean1, var1))
    rng = seeding.rng(seed)
    counts, bits, lengths = law.sample_children(n_samples, rng)
    owner = np.repeat(np.arange(n_samples), counts)
    nu = counts.astype(float)
    nu1 = np.bincount(owner, weights=(bits == 1).astype(float), minlength=n_samples)
    lsum = np.bincount(owner, weights=np.where(bits == 1, lengths, 0.0), minlength=n_samples)
    n = float(n_samples)
    var1 = float(nu1.var(ddof=1))
    c = nu1 - nu1.mean()
    m4 = float(np.mean(c ** 4))
    se_var = math.sqrt(max(m4 - var1 ** 2 * (n - 3) / (n - 1), 0.0) / n)
    mean1 = float(nu1.mean())
    return ParamEstimate(
        m=float(nu.mean()), mu=float(lsum.mean()), sigma2=var1, mean_type1=mean1,
        se_m=float(nu.std(ddof=1) / math.sqrt(n)), se_mu=float(lsum.std(ddof=1) / math.sqrt(n)),
        se_sigma2=se_var, se_mean_type1=float(nu1.std(ddof=1) / math.sqrt(n)),
        n_samples=n_samples, declared=law.declared, flags=_flags(mean1, var1))


def write_leafed_csv(path, f: LeafedForest, extra=None) -> None:
    write_forest_csv(path, f.forest, type_tag=f.bit, lengths=f.length, extra=extra)
