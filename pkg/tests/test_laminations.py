import math
from fractions import Fraction

import numpy as np
import pytest

from gwforest import laminations as L
from gwforest.spectral import expected_Zn_exact


def test_enumerate_m4():
    out = L.lamination_offspring_enumerate(4)
    assert [ch for _, ch in out] == [(5,), (4,), (), (4,), (5,)]
    assert all(p == pytest.approx(0.2) for p, _ in out)


def test_enumerate_m6_two_children():
    assert L.lamination_offspring_enumerate(6)[3][1] == (4, 4)


def test_enumerate_rejects_small_types():
    with pytest.raises(ValueError):
        L.lamination_offspring_enumerate(3)
    with pytest.raises(ValueError):
        L.closed_forms(2)


@pytest.mark.parametrize("m", range(4, 40))
def test_enumeration_invariants(m):
    out = L.lamination_offspring_enumerate(m)
    assert len(out) == m + 1
    for mp, (_, ch) in enumerate(out):
        assert len(ch) in (0, 1, 2)
        assert all(4 <= c <= m + 1 for c in ch)
        assert (len(ch) == 2) == (3 <= mp <= m - 3)
    # mean row 2/(m+1) 1{j <= m+1}, with exact rationals
    cnt = {}
    for _, ch in out:
        for c in ch:
            cnt[c] = cnt.get(c, 0) + 1
    assert all(Fraction(cnt.get(j, 0), m + 1) == Fraction(2, m + 1) for j in range(4, m + 2))


def test_sampler_matches_enumeration():
    rng = np.random.default_rng(0)
    law = L.LaminationLaw()
    m = 9
    c, ch = law.sample_children(np.full(200_000, m), rng)
    off = np.cumsum(c) - c
    first = np.where(c > 0, ch[np.minimum(off, ch.size - 1)], 0)
    emp = np.bincount(first[c > 0], minlength=m + 2) / c.size
    exact = np.zeros(m + 2)
    for p, kids in L.lamination_offspring_enumerate(m):
        if kids:
            exact[kids[0]] += p
    se = np.sqrt(exact * (1 - exact) / c.size)
    assert (np.abs(emp - exact) <= 4 * se + 1e-12).all()


def test_closed_forms_i4():
    cf = L.closed_forms(4)
    assert cf["a"] == pytest.approx(1 / 3, abs=1e-15)
    assert cf["b"] == pytest.approx(4 / (math.e ** 2 - 1), rel=1e-15)
    assert cf["b"] == pytest.approx(0.6260706, abs=1e-7)
    assert cf["pi"] == pytest.approx(0.2086902, abs=1e-7)
    assert cf["eta2"] == pytest.approx(0.0783929, abs=1e-7)


def test_closed_form_normalisation():
    a, b, _ = L.closed_form_vectors(L.lamination_types(57))
    assert abs(a.sum() - 1) < 1e-12 and abs(a @ b - 1) < 1e-12


def test_closed_forms_exact_rationals():
    # a_i = 2^(i-3)(i-3)/(i-1)! evaluated without floating error
    for i in range(4, 30):
        exact = Fraction(2 ** (i - 3) * (i - 3), math.factorial(i - 1))
        assert L.closed_forms(i)["a"] == pytest.approx(float(exact), rel=1e-13)


def test_constants():
    assert L.SURVIVAL_LIMIT == pytest.approx(15.973, abs=1e-3)
    assert L.SURVIVAL_ALT == pytest.approx(25.513, abs=1e-3)
    assert L.SURVIVAL_LIMIT == pytest.approx(2 * L.closed_forms(4)["b"] / L.ETA2, rel=1e-14)
    assert L.LIMIT_EZ == pytest.approx(0.6260706, abs=1e-7)


def test_survival_exact_small_n():
    # P_4(Z_1 != 0) = 4/5; P_4(Z_2 != 0) by enumerating two generations
    def p_extinct(x, n):
        if n == 0:
            return 0.0
        tot = 0.0
        for p, ch in L.lamination_offspring_enumerate(x):
            q = p
            for c in ch:
                q *= p_extinct(c, n - 1)
            tot += q
        return tot

    ex = L.survival_exact([1, 2, 3, 4])
    for n in (1, 2, 3, 4):
        assert ex[n] == pytest.approx(1 - p_extinct(4, n), abs=1e-14)


def test_survival_exact_fft_matches_direct():
    # the fft route kicks in past 256 types; compare with the direct convolution
    big = L.survival_exact([300])[300]
    K = 306
    x = np.arange(K + 1, dtype=float)
    q = np.zeros(K + 2)
    for _ in range(300):
        A = np.ones(K + 1)
        A[3:] = q[4:K + 2]
        conv = np.convolve(A, A)[:K + 1]
        q = np.zeros(K + 2)
        q[4:K + 1] = conv[4:] / (x[4:] + 1)
    assert big == pytest.approx(1 - q[4], rel=1e-9)


def test_exact_chain_limit():
    types = L.lamination_types(60)
    _, b, _ = L.closed_form_vectors(types)
    v50, _ = expected_Zn_exact(L.kernel_closed(types), b, 0, 50)
    assert abs(v50 - L.LIMIT_EZ) < 1e-3


def test_reproduce_section5_report():
    rep = L.reproduce_section5([50], R=10**4, seed=1, survival_n=[100, 200])
    assert rep["spectral"]["pass"] and rep["expected_Zn_pass"]
    assert abs(rep["expected_Zn"][0]["E4_Zn"] - 0.626075) < 1e-3
    est = rep["survival"]["estimates"]
    assert [e["n"] for e in est] == [100, 200]
    assert all("exact_n_P" in e for e in est)
    with pytest.raises(ValueError):
        L.reproduce_section5([50], R=100)
