"""The lamination offspring law on types {4, 5, 6, ...} and its closed forms."""
from __future__ import annotations

import math
import time
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .multitype import MultitypeLaw

E2M1 = math.e ** 2 - 1.0
ETA2 = 16.0 / (5.0 * E2M1 ** 2)
LIMIT_EZ = 4.0 / E2M1                  # lim E_4[Z_n]
SURVIVAL_LIMIT = 5.0 * E2M1 / 2.0    # 2 b_4 / eta^2
SURVIVAL_ALT = 5.0 * E2M1 ** 2 / 8.0  # 2 / eta^2
MIN_TYPE = 4


def _check_type(m):
    if int(m) != m or m < MIN_TYPE:
        raise ValueError(f"lamination types are integers >= {MIN_TYPE}, got {m}")


def lamination_offspring_enumerate(m: int):
    """The m+1 equiprobable outcomes of a type-m vertex, by m' ascending."""
    _check_type(m)
    m = int(m)
    p = 1.0 / (m + 1)
    out = []
    for mp in range(m + 1):
        ch = []
        if mp >= 3:
            ch.append(1 + mp)
        if mp <= m - 3:
            ch.append(1 + m - mp)
        out.append((p, tuple(ch)))
    return out


class LaminationLaw(MultitypeLaw):
    """A type-m vertex draws m' uniform on {0..m}; it has a child of type 1+m'
    when m' >= 3, then a child of type 1+m-m' when m' <= m-3."""

    name = "lamination"

    @property
    def has_enumerator(self):
        return True

    def enumerate(self, x):
        return lamination_offspring_enumerate(x)

    def sample_children(self, types, rng):
        m = np.asarray(types, np.int64)
        if m.size and m.min() < MIN_TYPE:
            raise ValueError(f"lamination types are integers >= {MIN_TYPE}")
        mp = rng.integers(0, m + 1)
        first = mp >= 3
        second = mp <= m - 3
        counts = first.astype(np.int64) + second
        pair = np.empty((m.shape[0], 2), np.int64)
        pair[:, 0] = 1 + mp
        pair[:, 1] = 1 + m - mp
        keep = np.empty((m.shape[0], 2), np.bool_)
        keep[:, 0] = first
        keep[:, 1] = second
        return counts, pair[keep]

    def to_spec(self):
        return {"kind": "builtin", "name": "lamination"}


def closed_forms(i: int) -> dict:
    """a_i, b_i, pi_i and eta^2 of the lamination law."""
    _check_type(i)
    i = int(i)
    # log form: 2^(i-3)/(i-1)! overflows a float long before it underflows
    a = math.exp((i - 3) * math.log(2.0) + math.log(i - 3) - math.lgamma(i))
    b = 2.0 * (i - 2) / E2M1
    return {"a": a, "b": b, "pi": a * b, "eta2": ETA2}


def closed_form_vectors(types: Sequence[int]):
    cf = [closed_forms(int(t)) for t in types]
    return (np.array([c["a"] for c in cf]), np.array([c["b"] for c in cf]),
            np.array([c["pi"] for c in cf]))


def mean_matrix_closed(types: Sequence[int]) -> np.ndarray:
    """m_{i,j} = 2/(i+1) 1{j <= i+1} on the given types."""
    t = np.asarray(types, np.int64)
    return np.where(t[None, :] <= t[:, None] + 1, 2.0 / (t[:, None] + 1.0), 0.0)


def kernel_closed(types: Sequence[int]) -> np.ndarray:
    """p_{i,j} = 2(j-2)/((i-2)(i+1)) for 4 <= j <= i+1."""
    t = np.asarray(types, np.int64).astype(float)
    val = 2.0 * (t[None, :] - 2.0) / ((t[:, None] - 2.0) * (t[:, None] + 1.0))
    return np.where((t[None, :] >= MIN_TYPE) & (t[None, :] <= t[:, None] + 1), val, 0.0)


def survival_exact(n_list: Iterable[int]) -> dict:
    """P_4(Z_n != 0) by iterating the offspring generating function.

    With A(j) = q(1+j) for j >= 3 and A(j) = 1 otherwise, the extinction
    probabilities satisfy q_{k}(x) = sum_{m'} A(m') A(x-m') / (x+1), a
    self-convolution. Types grow by at most one per generation, so a window
    of n+6 types is exact for P_4.
    """
    from scipy.signal import fftconvolve

    ns = sorted(set(int(n) for n in n_list))
    if not ns or ns[0] < 0:
        raise ValueError("n must be >= 0")
    K = ns[-1] + 6
    x = np.arange(K + 1, dtype=np.float64)
    q = np.zeros(K + 2)
    out = {}
    if ns[0] == 0:
        out[0] = 1.0
    for k in range(1, ns[-1] + 1):
        A = np.ones(K + 1)
        A[3:] = q[4:K + 2]
        conv = fftconvolve(A, A)[:K + 1] if K > 256 else np.convolve(A, A)[:K + 1]
        q = np.zeros(K + 2)
        q[MIN_TYPE:K + 1] = conv[MIN_TYPE:K + 1] / (x[MIN_TYPE:] + 1.0)
        if k in ns:
            out[k] = float(1.0 - q[MIN_TYPE])
    return out


def lamination_types(K: int) -> np.ndarray:
    return np.arange(MIN_TYPE, MIN_TYPE + int(K), dtype=np.int64)


def reproduce_section5(n_list: Iterable[int] = (50, 100), R: int = 10**4, seed: int = 0,
                       K: int = 60, survival_n: Optional[Sequence[int]] = None,
                       threads: Optional[int] = None) -> dict:
    """Exact E_4[Z_n], spectral cross-check and survival constant comparison.

    ``survival_n`` defaults to ``n_list``. The returned dict is JSON ready and
    carries a top-level ``pass`` flag.
    """
    from . import scaling, spectral

    n_list = sorted(int(n) for n in n_list)
    survival_n = n_list if survival_n is None else sorted(int(n) for n in survival_n)
    if R < 10**4:
        raise ValueError("R must be >= 10^4")
    law = LaminationLaw()
    t0 = time.perf_counter()

    # spectral cross-check at K
    types = lamination_types(K)
    mm = spectral.mean_matrix(law, types)
    eig = spectral.solve_eigenvectors(mm.M)
    eta = spectral.eta_squared(law, types, eig.a, eig.b)
    a_cf, b_cf, _ = closed_form_vectors(types)
    head = types <= 20
    spec_diff = max(float(np.abs(eig.a - a_cf)[head].max()), float(np.abs(eig.b - b_cf)[head].max()))
    spectral_rep = {
        "K": int(K), "eigenvalue": eig.eigenvalue, "eta2": eta.eta2, "eta2_closed": ETA2,
        "max_abs_diff_i_le_20": spec_diff,
        "residual_left": eig.residual_left, "residual_right": eig.residual_right,
        "pass": bool(spec_diff < 1e-8 and abs(eig.eigenvalue - 1) < 1e-6 and abs(eta.eta2 - ETA2) < 1e-6),
    }

    # exact chain: closed-form b avoids underflow of a on wide windows
    Kc = max(int(K), max(n_list) + 10)
    tc = lamination_types(Kc)
    _, bc, _ = closed_form_vectors(tc)
    p = kernel_closed(tc)
    exact = []
    for n in n_list:
        val, lost = spectral.expected_Zn_exact(p, bc, 0, n)
        exact.append({"n": n, "E4_Zn": val, "limit": LIMIT_EZ, "abs_diff": abs(val - LIMIT_EZ),
                      "leak": lost})
    exact_pass = any(e["n"] >= 50 for e in exact) and all(
        e["abs_diff"] < 1e-3 for e in exact if e["n"] >= 50)

    surv = scaling.survival_constant_report(law, x0=4, n_list=survival_n, R=R, seed=seed,
                                            candidates={"2b4/eta2": SURVIVAL_LIMIT,
                                                        "2/eta2": SURVIVAL_ALT},
                                            threads=threads, exact=survival_exact(survival_n))
    return {
        "law": law.to_spec(), "seed": int(seed), "R": int(R), "K": int(K),
        "spectral": spectral_rep,
        "expected_Zn": exact, "expected_Zn_pass": bool(exact_pass),
        "survival": surv,
        "pass": bool(spectral_rep["pass"] and exact_pass and surv["pass"]),
        "runtime": time.perf_counter() - t0,
    }
