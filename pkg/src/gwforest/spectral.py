"""Truncated mean-matrix analysis: Perron vectors, eta^2, spine kernel.

Countable type spaces are finitized to a window of retained types. Every
quantity that sums over offspring reports the mass that fell outside the
window (``leak``) instead of silently dropping it.
"""
from __future__ import annotations

import json
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import seeding
from .errors import CriticalityWarning, IrreducibilityError, TruncationLeakError
from .multitype import MultitypeLaw

MC_MIN_SAMPLES = 1000


def _index_of(types: np.ndarray):
    pos = {int(t): i for i, t in enumerate(types.tolist())}
    return pos


def retained_types(law: MultitypeLaw, x0: int, K: int, n_probe: int = 2000, seed: int = 0):
    """Up to K type codes reachable from x0, discovered breadth-first, sorted."""
    if K < 1:
        raise ValueError("K must be >= 1")
    found = [int(x0)]
    seen = {int(x0)}
    queue = deque([int(x0)])
    rng = seeding.rng(seed)
    while queue and len(found) < K:
        x = queue.popleft()
        out = law.enumerate(x)
        if out is not None:
            succ = sorted({c for p, ch in out if p > 0 for c in ch})
        else:
            _, ch = law.sample_children(np.full(n_probe, x, np.int64), rng)
            succ = sorted(set(ch.tolist()))
        for y in succ:
            if y not in seen:
                seen.add(y)
                found.append(y)
                queue.append(y)
                if len(found) >= K:
                    break
    return np.array(sorted(found), np.int64)


@dataclass
class MeanMatrix:
    types: np.ndarray
    M: np.ndarray
    leak: np.ndarray                 # expected children per row outside the window
    se: Optional[np.ndarray] = None  # Monte Carlo standard errors (mc mode)
    mode: str = "exact"


def mean_matrix(law: MultitypeLaw, types: Sequence[int], mode: str = "exact",
                n_samples: Optional[int] = None, seed: int = 0) -> MeanMatrix:
    """m_{x,y} = E_x[number of type-y children] on the retained window."""
    types = np.asarray(types, np.int64)
    K = types.shape[0]
    pos = _index_of(types)
    M = np.zeros((K, K))
    leak = np.zeros(K)
    if mode == "exact":
        for i, x in enumerate(types.tolist()):
            out = law.enumerate(x)
            if out is None:
                raise ValueError(f"exact mode needs an enumerator (type {x})")
            for p, ch in out:
                for c in ch:
                    j = pos.get(c)
                    if j is None:
                        leak[i] += p
                    else:
                        M[i, j] += p
        return MeanMatrix(types, M, leak, None, "exact")
    if mode != "mc":
        raise ValueError(f"unknown mode {mode!r}")
    if n_samples is None or n_samples < MC_MIN_SAMPLES:
        raise ValueError(f"mc mode needs n_samples >= {MC_MIN_SAMPLES}")
    se = np.zeros((K, K))
    for i, x in enumerate(types.tolist()):
        rng = seeding.stream(seed, i)
        counts, ch = law.sample_children(np.full(n_samples, x, np.int64), rng)
        owner = np.repeat(np.arange(n_samples), counts)
        col = np.array([pos.get(c, -1) for c in ch.tolist()], np.int64) if ch.size else np.zeros(0, np.int64)
        inside = col >= 0
        tab = np.zeros((n_samples, K + 1))
        np.add.at(tab, (owner[inside], col[inside]), 1.0)
        np.add.at(tab, (owner[~inside], np.full((~inside).sum(), K)), 1.0)
        M[i] = tab[:, :K].mean(axis=0)
        se[i] = tab[:, :K].std(axis=0, ddof=1) / math.sqrt(n_samples)
        leak[i] = tab[:, K].mean()
    return MeanMatrix(types, M, leak, se, "mc")


def is_irreducible(M: np.ndarray) -> bool:
    n, _ = connected_components(M > 0, directed=True, connection="strong")
    return n == 1


@dataclass
class EigenResult:
    a: np.ndarray
    b: np.ndarray
    eigenvalue: float
    residual_left: float    # ||a^T M - lambda a^T||_inf
    residual_right: float   # ||M b - lambda b||_inf
    iterations: int
    converged: bool


def _perron(A: np.ndarray, tol: float, max_iter: int):
    # lazy iteration (A + lambda I)/2 kills periodicity without moving eigenvectors
    n = A.shape[0]
    v = np.full(n, 1.0 / n)
    lam = 1.0
    best = (math.inf, v, lam, 0)
    stall = 0
    for it in range(1, max_iter + 1):
        Av = A @ v
        lam = float(Av.sum() / v.sum())
        w = 0.5 * (Av + v)
        w /= w.sum()
        res = float(np.abs(A @ w - lam * w).max() / np.abs(w).max())
        if res < best[0]:
            best = (res, w, lam, it)
            stall = 0
        else:
            stall += 1
        if res <= tol or stall > 50:
            break
        v = w
    res, w, _, it = best
    lam = float((A @ w).sum() / w.sum())
    return w, lam, it, res <= tol or stall > 50


def solve_eigenvectors(M: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000,
                       criticality_tol: float = 1e-6, allow_underflow: bool = False) -> EigenResult:
    """Positive left/right Perron vectors with sum(a) = 1 and sum(a*b) = 1.

    With ``allow_underflow`` entries of a that underflow to zero on wide
    windows are tolerated; b must stay positive.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("square matrix required")
    if (M < 0).any():
        raise ValueError("mean matrix must be non-negative")
    if not is_irreducible(M):
        raise IrreducibilityError("mean matrix not irreducible")
    inner_tol = tol * 1e-3
    b, lam_b, it_b, ok_b = _perron(M, inner_tol, max_iter)
    a, lam_a, it_a, ok_a = _perron(M.T, inner_tol, max_iter)
    a = a / a.sum()
    b = b / float(a @ b)
    lam = float(a @ M @ b / (a @ b))
    res_l = float(np.abs(a @ M - lam * a).max())
    res_r = float(np.abs(M @ b - lam * b).max())
    if abs(lam - 1.0) > criticality_tol:
        warnings.warn(f"dominant eigenvalue {lam:.12g} deviates from 1", CriticalityWarning,
                      stacklevel=2)
    if (b <= 0).any() or ((a <= 0).any() and not allow_underflow):
        raise ArithmeticError("Perron vectors lost positivity (underflow?)")
    return EigenResult(a, b, lam, res_l, res_r, max(it_a, it_b), ok_a and ok_b)


def offspring_b_moments(law: MultitypeLaw, types: np.ndarray, b: np.ndarray):
    """Per retained type: E_x[(sum b)^2 - sum b^2] and the out-of-window probability."""
    pos = _index_of(types)
    val = np.zeros(types.shape[0])
    leak = np.zeros(types.shape[0])
    for i, x in enumerate(types.tolist()):
        out = law.enumerate(x)
        if out is None:
            raise ValueError(f"exact mode needs an enumerator (type {x})")
        for p, ch in out:
            bs = []
            escaped = False
            for c in ch:
                j = pos.get(c)
                if j is None:
                    escaped = True
                else:
                    bs.append(b[j])
            s = sum(bs)
            val[i] += p * (s * s - sum(v * v for v in bs))
            if escaped:
                leak[i] += p
    return val, leak


@dataclass
class EtaResult:
    eta2: float
    se: float
    leak: float          # a-weighted probability of an out-of-window child
    degenerate: bool
    mode: str


def eta_squared(law: MultitypeLaw, types: Sequence[int], a: np.ndarray, b: np.ndarray,
                mode: str = "exact", n_samples: Optional[int] = None, seed: int = 0,
                tol: float = 1e-12, n_blocks: int = 20) -> EtaResult:
    """eta^2 = sum_x a_x sum_{y,z} b_y Q^x_{y,z} b_z.

    Uses the identity sum_{y,z} b_y Q^x_{y,z} b_z = E_x[(sum b)^2 - sum b^2].
    In mc mode the error bar is a delete-one-block jackknife.
    """
    types = np.asarray(types, np.int64)
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if mode == "exact":
        val, leak = offspring_b_moments(law, types, b)
        eta2 = float(a @ val)
        se = 0.0
        leak_tot = float(a @ leak)
    elif mode == "mc":
        if n_samples is None or n_samples < MC_MIN_SAMPLES:
            raise ValueError(f"mc mode needs n_samples >= {MC_MIN_SAMPLES}")
        pos = _index_of(types)
        K = types.shape[0]
        blocks = np.zeros((n_blocks, K))
        leak = np.zeros(K)
        for i, x in enumerate(types.tolist()):
            rng = seeding.stream(seed, i)
            counts, ch = law.sample_children(np.full(n_samples, x, np.int64), rng)
            owner = np.repeat(np.arange(n_samples), counts)
            col = np.array([pos.get(c, -1) for c in ch.tolist()], np.int64)
            bb = np.where(col >= 0, b[np.maximum(col, 0)], 0.0)
            s = np.bincount(owner, weights=bb, minlength=n_samples)
            s2 = np.bincount(owner, weights=bb * bb, minlength=n_samples)
            y = s * s - s2
            esc = np.bincount(owner, weights=(col < 0).astype(float), minlength=n_samples) > 0
            leak[i] = esc.mean()
            blk = np.array_split(y, n_blocks)
            blocks[:, i] = [bl.mean() for bl in blk]
        full = blocks.mean(axis=0)
        eta2 = float(a @ full)
        jack = np.array([a @ ((full * n_blocks - blocks[j]) / (n_blocks - 1)) for j in range(n_blocks)])
        se = float(math.sqrt((n_blocks - 1) / n_blocks * ((jack - jack.mean()) ** 2).sum()))
        leak_tot = float(a @ leak)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if eta2 < -tol:
        raise ArithmeticError(f"negative eta^2 ({eta2}): inconsistent inputs")
    eta2 = max(eta2, 0.0)
    return EtaResult(eta2, se, leak_tot, eta2 <= tol, mode)


def q_tensor(law: MultitypeLaw, x: int, types: Sequence[int]) -> np.ndarray:
    """Q^x_{y,z} = E_x[nu^y nu^z] - delta_{y,z} m_{x,z} on the window."""
    types = np.asarray(types, np.int64)
    pos = _index_of(types)
    K = types.shape[0]
    Q = np.zeros((K, K))
    m = np.zeros(K)
    for p, ch in law.enumerate(x):
        cnt = np.zeros(K)
        for c in ch:
            j = pos.get(c)
            if j is not None:
                cnt[j] += 1
        Q += p * np.outer(cnt, cnt)
        m += p * cnt
    return Q - np.diag(m)


@dataclass
class SpineKernel:
    types: np.ndarray
    p: np.ndarray
    pi: np.ndarray
    leak: np.ndarray   # 1 - row sums


def spine_kernel(M: np.ndarray, b: np.ndarray, a: Optional[np.ndarray] = None,
                 types: Optional[Sequence[int]] = None) -> SpineKernel:
    """p_{x,y} = b_y m_{x,y} / b_x and pi_x = a_x b_x."""
    M = np.asarray(M, float)
    b = np.asarray(b, float)
    if (b <= 0).any():
        raise ValueError("b must be positive")
    p = M * b[None, :] / b[:, None]
    leak = 1.0 - p.sum(axis=1)
    if a is None:
        pi, _, _, _ = _perron(p.T, 1e-15, 100_000)
    else:
        pi = np.asarray(a, float) * b
    pi = pi / pi.sum()
    t = np.arange(M.shape[0]) if types is None else np.asarray(types, np.int64)
    return SpineKernel(t, p, pi, leak)


def expected_Zn_exact(p: np.ndarray, b: np.ndarray, x0_index: int, n: int,
                      leak_tol: float = 1e-9):
    """E_{x0}[Z_n] = b_{x0} sum_y p^n(x0, y) / b_y by n vector-matrix products.

    Returns ``(value, leaked_mass)``; raises when more than ``leak_tol`` of the
    chain's mass escaped the window.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    v = np.zeros(p.shape[0])
    v[x0_index] = 1.0
    for _ in range(n):
        v = v @ p
    lost = 1.0 - float(v.sum())
    if lost > leak_tol:
        raise TruncationLeakError(f"chain lost {lost:.3g} of its mass in {n} steps; widen K")
    if n == 0:
        return 1.0, 0.0
    return float(b[x0_index] * np.sum(v / b)), max(lost, 0.0)


@dataclass
class DriftReport:
    types: np.ndarray
    margins: np.ndarray          # (1-beta_margin) V(x) - sum_y p_{x,y} V(y)
    relative_margins: np.ndarray  # margins / V(x)
    side_condition: np.ndarray   # 1/b_x <= V(x)
    passed: bool

    def to_dict(self):
        return {"types": self.types.tolist(), "margins": self.margins.tolist(),
                "relative_margins": self.relative_margins.tolist(),
                "side_condition": self.side_condition.tolist(), "pass": self.passed,
                "min_relative_margin": float(self.relative_margins.min()) if self.types.size else None}


def drift_check(p: np.ndarray, types: Sequence[int], beta: float, beta_margin: float,
                C: Iterable[int], lo: int, hi: int, b: Optional[np.ndarray] = None,
                leak_tol: float = 1e-12) -> DriftReport:
    """Geometric drift with V(x) = beta**x outside the finite set C on [lo, hi]."""
    if not beta > 1:
        raise ValueError("beta must exceed 1")
    if not 0 < beta_margin < 1:
        raise ValueError("beta_margin must lie in (0, 1)")
    types = np.asarray(types, np.int64)
    pos = _index_of(types)
    C = set(int(c) for c in C)
    xs = [x for x in range(int(lo), int(hi) + 1) if x not in C]
    margins, rel, side = [], [], []
    for x in xs:
        i = pos.get(x)
        if i is None:
            raise TruncationLeakError(f"type {x} outside the retained window; widen K")
        row = p[i]
        if 1.0 - row.sum() > leak_tol:
            raise TruncationLeakError(f"successors of type {x} escape the window; widen K")
        # ratio form avoids overflow of beta**y
        r = (1.0 - beta_margin) - float(np.sum(row * np.power(beta, (types - x).astype(float))))
        rel.append(r)
        with np.errstate(over="ignore"):
            margins.append(r * float(np.power(beta, float(x))))
        if b is not None:
            side.append(bool(1.0 / b[i] <= beta ** x))
    rel = np.array(rel)
    side_arr = np.array(side, bool) if b is not None else np.ones(len(xs), bool)
    passed = bool((rel >= 0).all() and side_arr.all())
    return DriftReport(np.array(xs, np.int64), np.array(margins), rel, side_arr, passed)


@dataclass
class SpectralData:
    K: int
    types: np.ndarray
    M: np.ndarray
    a: np.ndarray
    b: np.ndarray
    pi: np.ndarray
    eta2: float
    eta2_se: float
    p: np.ndarray
    leak: np.ndarray
    eigenvalue: float
    residual_left: float
    residual_right: float
    kernel_leak: np.ndarray = field(default=None)

    def index(self, x: int) -> int:
        hits = np.flatnonzero(self.types == int(x))
        if hits.size == 0:
            raise KeyError(f"type {x} not retained")
        return int(hits[0])

    def to_json_dict(self):
        return {"K": self.K, "types": self.types.tolist(), "eigenvalue": self.eigenvalue,
                "a": self.a.tolist(), "b": self.b.tolist(), "pi": self.pi.tolist(),
                "eta2": self.eta2, "eta2_se": self.eta2_se, "leak": self.leak.tolist(),
                "residuals": {"left": self.residual_left, "right": self.residual_right}}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)


def spectral_data(law: MultitypeLaw, x0: int, K: int, mode: str = "exact",
                  n_samples: Optional[int] = None, seed: int = 0) -> SpectralData:
    types = retained_types(law, x0, K, seed=seed)
    mm = mean_matrix(law, types, mode=mode, n_samples=n_samples, seed=seed)
    eig = solve_eigenvectors(mm.M)
    eta = eta_squared(law, types, eig.a, eig.b, mode=mode, n_samples=n_samples, seed=seed + 1)
    ker = spine_kernel(mm.M, eig.b, eig.a, types)
    return SpectralData(K=int(types.shape[0]), types=types, M=mm.M, a=eig.a, b=eig.b, pi=ker.pi,
                        eta2=eta.eta2, eta2_se=eta.se, p=ker.p, leak=mm.leak,
                        eigenvalue=eig.eigenvalue, residual_left=eig.residual_left,
                        residual_right=eig.residual_right, kernel_leak=ker.leak)
