"""Desk-scale statistical checks of the scaling limits.

Fixed-time marginals of rescaled height processes are compared with the
half-normal law, survival probabilities with their 1/n asymptotics, and the
coupling between the weighted and unweighted exploration processes is
measured directly.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import special, stats

from . import _kernels, explore, seeding
from .errors import TruncationError
from .leafed import LeafedLaw, ProcessTrace, estimate_params, offspring_moments_exact
from .multitype import MultitypeLaw

MIN_KS_SAMPLES = 100


@dataclass
class MarginalSample:
    values: np.ndarray
    n: int
    s: float
    R: int
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, np.float64)
        if (self.values < 0).any():
            raise ValueError("marginal values must be non-negative")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", "value"])
            for i, v in enumerate(self.values.tolist()):
                w.writerow([i, repr(v)])


@dataclass
class TestReport:
    name: str
    observed: float
    reference: Union[float, str, None]
    passed: bool
    p_value: Optional[float] = None
    ci: Optional[Sequence[float]] = None
    runtime: float = 0.0
    details: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_dict(self, include_runtime: bool = False) -> dict:
        out = {"name": self.name, "observed": self.observed, "reference": self.reference,
               "p_value": self.p_value, "ci": None if self.ci is None else list(self.ci),
               "pass": bool(self.passed), "details": self.details}
        if include_runtime:
            out["runtime"] = self.runtime
        return out


# ---------------------------------------------------------------- KS against half-normal

def half_normal_cdf(x, scale: float):
    return special.erf(np.maximum(x, 0.0) / (scale * math.sqrt(2.0)))


def ks_statistic(values: np.ndarray, cdf) -> float:
    """sup_x |F_R(x) - F(x)| with the right-continuous empirical CDF.

    Tied values form a single jump: at a value v the empirical CDF is compared
    from below (#{x_i < v}/R) and at the jump (#{x_i <= v}/R).
    """
    x = np.sort(np.asarray(values, np.float64))
    R = x.shape[0]
    v, cnt = np.unique(x, return_counts=True)
    upper = np.cumsum(cnt) / R
    lower = upper - cnt / R
    F = cdf(v)
    return float(max(np.max(upper - F), np.max(F - lower)))


def half_normal_test(sample: Union[MarginalSample, np.ndarray], scale: float,
                     level: float = 0.01) -> TestReport:
    """One-sample KS test against the half-normal law with the given scale.

    The p-value is the asymptotic Kolmogorov tail at sqrt(R) D.
    """
    t0 = time.perf_counter()
    values = sample.values if isinstance(sample, MarginalSample) else np.asarray(sample, float)
    if values.size == 0:
        raise ValueError("empty sample")
    if not scale > 0:
        raise ValueError("scale must be positive")
    R = values.shape[0]
    if R < MIN_KS_SAMPLES:
        raise ValueError(f"KS test needs R >= {MIN_KS_SAMPLES}")
    D = ks_statistic(values, lambda x: half_normal_cdf(x, scale))
    p = float(special.kolmogorov(math.sqrt(R) * D))
    det = {"R": R, "scale": scale, "level": level}
    if isinstance(sample, MarginalSample):
        det.update({"n": sample.n, "s": sample.s, "label": sample.label})
    return TestReport("half_normal_ks", D, f"half-normal(scale={scale!r})", p >= level,
                      p_value=p, runtime=time.perf_counter() - t0, details=det)


# ---------------------------------------------------------------- marginal samplers

def _prefix_chunks(children_fn, fertile_fn, root, n_nodes, R, seed, lanes, threads, prefix):
    def job(i, size, rng):
        return explore.dfs_prefix(children_fn, fertile_fn, root, n_nodes, size, rng)
    return seeding.map_chunks(job, R, lanes, seed, threads, prefix=prefix)


def reduce_prefix(parent_rank: np.ndarray, types: np.ndarray, depth: np.ndarray, x0: int):
    """Reduction of a single dfs prefix given by rank arrays.

    A prefix of a forest in lexicographic order reduces to the prefix of the
    reduced forest, because reduced parents are ancestors. Returns
    ``(t_parent_rank, length, bit)``.
    """
    n = parent_rank.shape[0]
    ids = np.arange(n, dtype=np.int64)
    return _kernels.reduce_pass(ids, np.ascontiguousarray(parent_rank, np.int64),
                                np.ascontiguousarray(types, np.int64),
                                np.ascontiguousarray(depth, np.int64), int(x0))


def height_marginals(law, n: int, s_list: Sequence[float], R: int, seed: int,
                     x0: Optional[int] = None, route: str = "direct", lanes: int = 500,
                     threads: Optional[int] = None) -> Dict[float, MarginalSample]:
    """Samples of H(floor(n s))/sqrt(n) over R independent forests, for each s.

    Leafed laws use weighted heights. Multitype laws (``x0`` required) use
    generations (``route='direct'``) or the weighted heights of the reduced
    prefix (``route='reduced'``).
    """
    s_list = [float(s) for s in s_list]
    if any(s <= 0 for s in s_list):
        raise ValueError("s must be positive")
    ks = [int(math.floor(n * s)) for s in s_list]
    n_nodes = max(ks) + 1
    if isinstance(law, LeafedLaw):
        chunks = _prefix_chunks(law.children_fn, law.fertile_fn, law.root, n_nodes, R, seed,
                                lanes, threads, (0,))
        H = np.concatenate([_kernels.prefix_heights(p, lab["length"]) for p, lab, _, _ in chunks])
        label = "weighted height"
    else:
        if x0 is None:
            raise ValueError("x0 is required for multitype laws")
        root = {"type": np.int64(x0)}
        key = (1,) if route == "direct" else (2,)
        chunks = _prefix_chunks(law.children_fn, None, root, n_nodes, R, seed, lanes, threads, key)
        if route == "direct":
            H = np.concatenate([d.astype(np.float64) for _, _, d, _ in chunks])
            label = "generation"
        elif route == "reduced":
            rows = []
            for p, lab, d, _ in chunks:
                for j in range(p.shape[0]):
                    tp, ell, _ = reduce_prefix(p[j], lab["type"][j], d[j], x0)
                    rows.append(_kernels.prefix_heights(tp[None, :], ell[None, :])[0])
            H = np.array(rows)
            label = "reduced weighted height"
        else:
            raise ValueError(f"unknown route {route!r}")
    return {s: MarginalSample(H[:, k] / math.sqrt(n), n, s, R, label) for s, k in zip(s_list, ks)}


def half_normal_synthetic(scale: float, R: int, rng) -> MarginalSample:
    return MarginalSample(np.abs(rng.normal(0.0, scale, R)), 0, 1.0, R, "synthetic")


# ---------------------------------------------------------------- survival

def wilson_interval(k: int, R: int, confidence: float = 0.95):
    z = float(stats.norm.ppf(0.5 + confidence / 2))
    p = k / R
    den = 1 + z * z / R
    c = (p + z * z / (2 * R)) / den
    h = z / den * math.sqrt(p * (1 - p) / R + z * z / (4 * R * R))
    return c - h, c + h


def _survive_leafed(law: LeafedLaw, n: float, size: int, rng, max_gen: int):
    owner = np.arange(size, dtype=np.int64)
    h = np.zeros(size)
    hit = np.zeros(size, bool)
    g = 0
    while owner.size:
        g += 1
        if g > max_gen:
            raise TruncationError(f"trees still growing after {max_gen} generations")
        c, bits, lens = law.sample_children(owner.size, rng)
        par = np.repeat(np.arange(owner.size), c)
        own = owner[par]
        hh = h[par] + lens
        reached = hh >= n
        hit[own[reached]] = True
        keep = (bits == 1) & ~hit[own]
        owner, h = own[keep], hh[keep]
    return hit


def _survive_multitype(law: MultitypeLaw, x0: int, n: int, size: int, rng):
    owner = np.arange(size, dtype=np.int64)
    types = np.full(size, x0, np.int64)
    for _ in range(n):
        if owner.size == 0:
            break
        c, ch = law.sample_children(types, rng)
        owner = np.repeat(owner, c)
        types = ch
    hit = np.zeros(size, bool)
    hit[owner] = True
    return hit


def _degenerate_leafed(law: LeafedLaw) -> bool:
    if law.enumerate() is not None:
        _, _, mean1, var1 = offspring_moments_exact(law)
        return var1 == 0.0 and mean1 == 1.0
    if law.declared and law.declared.get("sigma2") == 0:
        return True
    return False


def _degenerate_multitype(law: MultitypeLaw, x0: int) -> bool:
    """Every reachable type has exactly one child almost surely (checked by enumeration)."""
    if not law.has_enumerator:
        return False
    seen, todo = set(), [int(x0)]
    while todo and len(seen) < 10_000:
        x = todo.pop()
        if x in seen:
            continue
        seen.add(x)
        for p, ch in law.enumerate(x):
            if p > 0 and len(ch) != 1:
                return False
            if p > 0:
                todo.extend(ch)
    return True


def survival_reference(law, x0: Optional[int] = None, K: int = 60) -> Optional[float]:
    """2 mu / sigma^2 for leafed laws, 2 b_x0 / eta^2 for multitype laws (exact mode)."""
    if isinstance(law, LeafedLaw):
        if law.enumerate() is not None:
            _, mu, _, var1 = offspring_moments_exact(law)
        elif law.declared:
            mu, var1 = law.declared["mu"], law.declared["sigma2"]
        else:
            return None
        return 2 * mu / var1 if var1 > 0 else None
    from . import spectral
    if not law.has_enumerator:
        return None
    sd = spectral.spectral_data(law, x0, K)
    return 2 * float(sd.b[sd.index(x0)]) / sd.eta2 if sd.eta2 > 0 else None


def survival_estimate(law, n: int, R: int, seed: int, x0: Optional[int] = None,
                      reference: Optional[float] = None, rel_tol: float = 0.1,
                      confidence: float = 0.95, chunk: int = 50_000,
                      threads: Optional[int] = None, max_gen_factor: int = 1000) -> TestReport:
    """n P(h_max >= n) with a Wilson interval.

    For leafed laws h_max is the maximal weighted height; for multitype laws
    it is the maximal generation, so the event is {Z_n != 0}. Passes when the
    estimate lies within ``rel_tol`` (relative) of the reference constant.
    """
    t0 = time.perf_counter()
    if n < 50:
        raise ValueError("n must be >= 50")
    if R < 10**4:
        raise ValueError("R must be >= 10^4")
    if isinstance(law, LeafedLaw):
        if _degenerate_leafed(law):
            raise ValueError("degenerate law: every tree is an infinite chain")

        def job(i, size, rng):
            return _survive_leafed(law, float(n), size, rng, max_gen_factor * n)
    else:
        if x0 is None:
            raise ValueError("x0 is required for multitype laws")
        if _degenerate_multitype(law, x0):
            raise ValueError("degenerate law: every tree is an infinite chain")

        def job(i, size, rng):
            return _survive_multitype(law, int(x0), int(n), size, rng)

    hits = np.concatenate(seeding.map_chunks(job, R, chunk, seed, threads, prefix=(int(n),)))
    k = int(hits.sum())
    lo, hi = wilson_interval(k, R, confidence)
    est = n * k / R
    if reference is None:
        reference = survival_reference(law, x0)
    passed = reference is not None and abs(est - reference) <= rel_tol * reference
    se = n * math.sqrt(max(k / R * (1 - k / R), 0.0) / R)
    return TestReport("survival", est, reference, bool(passed), ci=(n * lo, n * hi),
                      runtime=time.perf_counter() - t0,
                      details={"n": int(n), "R": int(R), "hits": k, "se": se,
                               "confidence": confidence, "rel_tol": rel_tol})


def _wls(X, y, se):
    W = 1.0 / se ** 2
    cov = np.linalg.inv(X.T @ (W[:, None] * X))
    beta = cov @ (X.T @ (W * y))
    resid = y - X @ beta
    return beta, cov, float((W * resid ** 2).sum())


def extrapolate_survival(ns, y, se, confidence: float = 0.95) -> dict:
    """Limit of n P_n from estimates at several n.

    Consistency: all estimates shifted by a common fitted (log n)/n trend
    have overlapping confidence intervals. Extrapolation: weighted fit of
    c + (d + e log n)/n (or c + d log(n)/n with two points). The plain
    c + d/n fit is reported alongside for comparison.
    """
    ns = np.asarray(ns, float)
    y = np.asarray(y, float)
    se = np.asarray(se, float)
    z = float(stats.norm.ppf(0.5 + confidence / 2))
    one = np.ones_like(ns)
    out = {"confidence": confidence}
    if ns.size == 1:
        c, c_se = float(y[0]), float(se[0])
        out.update({"model": "none", "c": c, "c_se": c_se, "ci": [c - z * c_se, c + z * c_se],
                    "consistent": True})
        return out
    f = np.log(ns) / ns
    beta, _, chi2 = _wls(np.column_stack([one, f]), y, se)
    adj = y - beta[1] * f
    lo, hi = adj - z * se, adj + z * se
    consistent = bool(lo.max() <= hi.min())
    if ns.size >= 3:
        X = np.column_stack([one, 1.0 / ns, f])
        model = "c + (d + e log n)/n"
    else:
        X = np.column_stack([one, f])
        model = "c + d log(n)/n"
    b3, cov3, chi3 = _wls(X, y, se)
    c, c_se = float(b3[0]), float(math.sqrt(cov3[0, 0]))
    b1, cov1, chi1 = _wls(np.column_stack([one, 1.0 / ns]), y, se)
    dof1 = ns.size - 2
    out.update({
        "model": model, "c": c, "c_se": c_se, "ci": [c - z * c_se, c + z * c_se],
        "residual_chi2": chi3, "consistent": consistent,
        "adjusted": adj.tolist(), "adjusted_ci": [[float(a), float(b)] for a, b in zip(lo, hi)],
        "inv_n_fit": {"c": float(b1[0]), "c_se": float(math.sqrt(cov1[0, 0])), "chi2": chi1,
                      "dof": dof1,
                      "p": float(stats.chi2.sf(chi1, dof1)) if dof1 > 0 else 1.0},
    })
    return out


def survival_constant_report(law, x0: Optional[int], n_list: Sequence[int], R: int, seed: int,
                             candidates: Dict[str, float], confidence: float = 0.95,
                             threads: Optional[int] = None, exact: Optional[Dict[int, float]] = None) -> dict:
    """Survival at several n (independent streams) and a verdict on candidate limits.

    A candidate is excluded when it lies outside the confidence interval of
    the extrapolated constant. Passes when the estimates are consistent, some
    candidate is excluded and some candidate is supported. ``exact`` maps n to
    exact survival probabilities, used for per-n z-scores when given.
    """
    reps = [survival_estimate(law, int(n), R, seed, x0=x0, reference=float("nan"),
                              confidence=confidence, threads=threads) for n in n_list]
    ns = np.array([r.details["n"] for r in reps], float)
    y = np.array([r.observed for r in reps])
    se = np.array([r.details["se"] for r in reps])
    fit = extrapolate_survival(ns, y, se, confidence)
    lo, hi = fit["ci"]
    excluded = {k: bool(not lo <= v <= hi) for k, v in candidates.items()}
    supported = [k for k, ex in excluded.items() if not ex]
    passed = fit["consistent"] and any(excluded.values()) and len(supported) >= 1
    rows = []
    for r in reps:
        row = {"n": int(r.details["n"]), "n_P": r.observed, "se": r.details["se"],
               "ci": list(r.ci), "hits": r.details["hits"]}
        if exact is not None and row["n"] in exact:
            e = row["n"] * exact[row["n"]]
            row["exact_n_P"] = e
            row["z_vs_exact"] = (r.observed - e) / row["se"] if row["se"] > 0 else None
        rows.append(row)
    if passed:
        verdict = "data support " + ", ".join(supported) + "; excluded " + ", ".join(
            k for k, ex in excluded.items() if ex)
    else:
        verdict = "undecided"
    return {"estimates": rows, "R": int(R), "seed": int(seed), "fit": fit,
            "candidates": dict(candidates), "excluded": excluded, "supported": supported,
            "consistent": fit["consistent"], "pass": bool(passed), "verdict": verdict}


# ---------------------------------------------------------------- exploration couplings

def trace_from_prefix(parent_rank: np.ndarray, bit: np.ndarray, length: np.ndarray) -> ProcessTrace:
    """ProcessTrace of a single dfs prefix (ids are ranks)."""
    parent_rank = np.ascontiguousarray(parent_rank, np.int64)
    H_ell = _kernels.prefix_heights(parent_rank[None, :], np.asarray(length, float)[None, :])[0]
    gen = _kernels.prefix_heights(parent_rank[None, :], np.ones((1, parent_rank.shape[0])))[0]
    one = np.asarray(bit) == 1
    psi = np.flatnonzero(one).astype(np.int64)
    k_of_rank = np.cumsum(one) - 1
    phi = k_of_rank.copy()
    zero = ~one
    phi[zero] = k_of_rank[parent_rank[zero]]
    gamma = np.cumsum(parent_rank < 0)
    return ProcessTrace(H_ell=H_ell, H_one=gen[psi].astype(np.int64), phi=phi.astype(np.int64),
                        psi=psi, Gamma=gamma.astype(np.int64),
                        node_id=np.arange(parent_rank.shape[0], dtype=np.int64))


def _horizontal(phi: np.ndarray, m: float, n: int) -> float:
    i = np.arange(n + 1)
    f = phi[:n + 1] / n
    left = np.abs(f - i / (n * m))
    right = np.abs(f[:-1] - (i[:-1] + 1) / (n * m))
    return float(max(left.max(), right.max()))


def closeness_report(trace: ProcessTrace, mu: float, m: float, n: int) -> dict:
    """vertical = max_{i<=n} |H_ell(i) - mu H_one(phi(i))| / sqrt(n);
    horizontal = sup_{s<=1} |k(floor(ns))/n - s/m|.

    k(i) is the number of type-1 vertices among u(0..i), minus one. It agrees
    with phi on type-1 vertices but is non-decreasing; phi itself sends a
    sterile vertex back to its parent, which can lie a macroscopic time
    earlier, so the same sup taken over phi is also returned
    (``horizontal_parent_phi``) but does not vanish in general.
    """
    if trace.H_ell.shape[0] < n + 1:
        raise ValueError(f"trace has fewer than {n + 1} vertices")
    phi = trace.phi[:n + 1]
    vert = float(np.max(np.abs(trace.H_ell[:n + 1] - mu * trace.H_one[phi]))) / math.sqrt(n)
    count = np.searchsorted(trace.psi, np.arange(n + 1), side="right") - 1
    return {"n": int(n), "vertical": vert, "horizontal": _horizontal(count, m, n),
            "horizontal_parent_phi": _horizontal(phi, m, n)}


def prefix_traces(law, n_nodes: int, runs: int, seed: int, x0: Optional[int] = None) -> List[ProcessTrace]:
    """One lexicographic prefix per run; multitype laws are reduced with respect to x0."""
    rng = seeding.stream(seed, 3)
    if isinstance(law, LeafedLaw):
        p, lab, _, _ = explore.dfs_prefix(law.children_fn, law.fertile_fn, law.root, n_nodes,
                                          runs, rng)
        return [trace_from_prefix(p[j], lab["bit"][j], lab["length"][j]) for j in range(runs)]
    if x0 is None:
        raise ValueError("x0 is required for multitype laws")
    p, lab, d, _ = explore.dfs_prefix(law.children_fn, None, {"type": np.int64(x0)}, n_nodes,
                                      runs, rng)
    out = []
    for j in range(runs):
        tp, ell, bit = reduce_prefix(p[j], lab["type"][j], d[j], x0)
        out.append(trace_from_prefix(tp, bit, ell))
    return out


def closeness_trend(law, mu: float, m: float, n_small: int = 10**3, n_large: int = 10**5,
                    runs: int = 10, seed: int = 0, x0: Optional[int] = None,
                    min_runs: int = 8) -> dict:
    """Both statistics at n_large versus n_small, run by run."""
    traces = prefix_traces(law, n_large + 1, runs, seed, x0)
    rows = []
    for tr in traces:
        a = closeness_report(tr, mu, m, n_small)
        b = closeness_report(tr, mu, m, n_large)
        rows.append({"small": a, "large": b,
                     "vertical_decreased": b["vertical"] < a["vertical"],
                     "horizontal_decreased": b["horizontal"] < a["horizontal"]})
    both = sum(r["vertical_decreased"] and r["horizontal_decreased"] for r in rows)
    return {"runs": rows, "n_small": n_small, "n_large": n_large, "mu": mu, "m": m,
            "both_decreased": int(both),
            "vertical_decreased": int(sum(r["vertical_decreased"] for r in rows)),
            "horizontal_decreased": int(sum(r["horizontal_decreased"] for r in rows)),
            "pass": bool(both >= min_runs)}


# ---------------------------------------------------------------- hypothesis (H) diagnostics

def _tail_flag(curve: np.ndarray) -> bool:
    """Heuristic: the y^2-weighted tail keeps growing across the grid."""
    third = max(1, len(curve) // 3)
    head = float(np.max(curve[:third]))
    return bool(curve[-1] > 0 and curve[-1] > 2.0 * head)


def hypothesis_H_report(law: LeafedLaw, n_samples: int, y_grid: Sequence[float], seed: int,
                        level: float = 0.01) -> dict:
    """Finite-sample diagnostics for the standing hypotheses on a leafed law."""
    y = np.asarray(y_grid, float)
    if y.size == 0 or (np.diff(y) <= 0).any():
        raise ValueError("y_grid must be increasing")
    est = estimate_params(law, n_samples, seed)
    z = float(stats.norm.ppf(1 - level / 2))
    out = est.to_dict()
    out["m_ci"] = [est.m - z * est.se_m, est.m + z * est.se_m]
    if est.exact:
        zc = 0.0 if abs(est.mean_type1 - 1) < 1e-12 else math.inf
    else:
        zc = (est.mean_type1 - 1) / est.se_mean_type1 if est.se_mean_type1 > 0 else (
            0.0 if est.mean_type1 == 1 else math.inf)
    out["H_c"] = {"z": zc, "pass": bool(abs(zc) < z)}
    out["H_c2"] = {"sigma2": est.sigma2, "ci": [est.sigma2 - z * est.se_sigma2,
                                                est.sigma2 + z * est.se_sigma2],
                   "positive": bool(est.sigma2 - z * est.se_sigma2 > 0)}
    enum = law.enumerate()
    if enum is not None:
        p = np.array([q for q, _ in enum])
        max0 = np.array([max([l for b, l in ch if b == 0], default=-np.inf) for _, ch in enum])
        ones = [np.array([l for b, l in ch if b == 1]) for _, ch in enum]
        c0 = y ** 2 * np.array([p[max0 > t].sum() for t in y])
        c1 = y ** 2 * np.array([sum(q * (o > t).sum() for q, o in zip(p, ones)) for t in y])
        bound = law.max_length()
        bounded = bound is not None and math.isfinite(bound)
        verdict = "exactly satisfied (bounded support)" if bounded else "exact curve"
        out["H_02"] = {"y": y.tolist(), "curve": c0.tolist(), "flag": _tail_flag(c0), "verdict": verdict}
        out["H_12"] = {"y": y.tolist(), "curve": c1.tolist(), "flag": _tail_flag(c1), "verdict": verdict}
        return out
    rng = seeding.stream(seed, 7)
    c, bits, lens = law.sample_children(n_samples, rng)
    own = np.repeat(np.arange(n_samples), c)
    max0 = np.full(n_samples, -np.inf)
    z0 = bits == 0
    np.maximum.at(max0, own[z0], lens[z0])
    l1 = lens[bits == 1]
    c0 = y ** 2 * np.array([(max0 > t).mean() for t in y])
    c1 = y ** 2 * np.array([(l1 > t).sum() / n_samples for t in y])
    bound = law.max_length()
    bounded = bound is not None and math.isfinite(bound)
    verdict = "exactly satisfied (bounded support)" if bounded else "monte carlo"
    out["H_02"] = {"y": y.tolist(), "curve": c0.tolist(), "flag": _tail_flag(c0), "verdict": verdict}
    out["H_12"] = {"y": y.tolist(), "curve": c1.tolist(), "flag": _tail_flag(c1), "verdict": verdict}
    return out
