"""End-to-end acceptance suite.

Each criterion records one PASS/FAIL line through the ``criterion`` fixture;
the lines are printed together at the end of the pytest session. Statistical
criteria use fixed seeds so every run sees the same draws.
"""
import json
import math
import time

import numpy as np
import pytest
from scipy import stats

from gwforest import cli, seeding, spectral
from gwforest import laminations as L
from gwforest.errors import TruncationError
from gwforest.leafed import GeometricLeafedLaw
from gwforest.multitype import sample_multitype_forest
from gwforest.reduction import (ReducedLeafedLaw, moment_summary, optional_line_counts,
                                reduced_params, verify_prop1)
from gwforest.scaling import (closeness_trend, half_normal_synthetic, half_normal_test,
                              height_marginals, survival_constant_report, survival_estimate,
                              wilson_interval)
from gwforest.spine import MultitypeTilt, spine_type_paths, transition_chi2, verify_many_to_one

LAM = L.LaminationLaw()
GEO = GeometricLeafedLaw(1.0)  # geometric(1/2) offspring, sigma^2 = 2
Z99 = stats.norm.ppf(0.995)


@pytest.fixture(scope="module")
def lam60():
    """Numerical spectral data of the lamination law on types 4..63."""
    types = L.lamination_types(60)
    mm = spectral.mean_matrix(LAM, types)
    eig = spectral.solve_eigenvectors(mm.M)
    eta = spectral.eta_squared(LAM, types, eig.a, eig.b)
    ker = spectral.spine_kernel(mm.M, eig.b, eig.a, types)
    return {"types": types, "M": mm.M, "eig": eig, "eta2": eta.eta2, "p": ker.p}


def test_c01_height_preservation_exact(criterion):
    t0 = time.perf_counter()
    bad, partial = [], 0
    for s in range(10_000):
        try:
            f = sample_multitype_forest(LAM, 4, 1, seed=s, hard_cap=10**4)
        except TruncationError as err:
            f = err.partial
            partial += 1
        if not verify_prop1(f, 4)[0]:
            bad.append(s)
    dt = time.perf_counter() - t0
    ok = criterion(1, not bad and dt < 60,
                   f"{10_000 - len(bad)}/10000 trees exact ({partial} capped at 10^4), {dt:.1f}s")
    assert ok, bad[:10]


def test_c02_spectral_closed_forms(criterion, lam60):
    types, eig = lam60["types"], lam60["eig"]
    a_cf, b_cf, _ = L.closed_form_vectors(types)
    head = types <= 20
    da = float(np.abs(eig.a - a_cf)[head].max())
    db = float(np.abs(eig.b - b_cf)[head].max())
    dl = abs(eig.eigenvalue - 1.0)
    de = abs(lam60["eta2"] - L.ETA2)
    ok = criterion(2, da < 1e-8 and db < 1e-8 and dl < 1e-6 and de < 1e-6,
                   f"max|a-cf|={da:.1e} max|b-cf|={db:.1e} |lambda-1|={dl:.1e} |eta2-cf|={de:.1e}")
    assert ok


def test_c03_reduced_moments(criterion):
    R, chunk = 10**6, 10**5
    law = ReducedLeafedLaw(LAM, 4)

    def job(i, size, rng):
        c, bits, _ = law.sample_children(size, rng)
        ones = np.bincount(np.repeat(np.arange(size), c), weights=bits, minlength=size)
        return c, ones

    parts = seeding.map_chunks(job, R, chunk, 2024, prefix=(0,))
    c = np.concatenate([p[0] for p in parts]).astype(float)
    ones = np.concatenate([p[1] for p in parts])
    zs = seeding.map_chunks(lambda i, size, rng: optional_line_counts(LAM, 4, 5, size, rng)[1],
                            R, chunk, 2024, prefix=(1,))
    z5 = np.concatenate(zs).astype(float)

    mc, mo, m5 = moment_summary(c), moment_summary(ones), moment_summary(z5)
    checks = {
        "E[children]=3": (mc["mean"] - 3.0) / mc["mean_se"],
        "E[bit-1]=1": (mo["mean"] - 1.0) / mo["mean_se"],
        "Var[bit-1]=0.6": (mo["var"] - 0.6) / mo["var_se"],
        "E4[Z5]=2/3": (m5["mean"] - 2.0 / 3.0) / m5["mean_se"],
    }
    ok = criterion(3, all(abs(z) < 4 for z in checks.values()),
                   ", ".join(f"{k} z={v:+.2f}" for k, v in checks.items()))
    assert ok


def test_c04_exact_chain_limit(criterion, lam60):
    # numerical route: solver b and kernel on types 4..63 for n = 50, 4..113 for n = 100
    i4 = 0
    v50, _ = spectral.expected_Zn_exact(lam60["p"], lam60["eig"].b, i4, 50)
    t110 = L.lamination_types(110)
    M110 = spectral.mean_matrix(LAM, t110).M
    e110 = spectral.solve_eigenvectors(M110)
    v100, _ = spectral.expected_Zn_exact(spectral.spine_kernel(M110, e110.b).p, e110.b, i4, 100)
    # closed-form route
    _, b_cf, _ = L.closed_form_vectors(t110)
    c50, _ = spectral.expected_Zn_exact(L.kernel_closed(t110), b_cf, i4, 50)
    d50, d_stab, d_routes = abs(v50 - L.LIMIT_EZ), abs(v100 - v50), abs(v50 - c50)
    ok = criterion(4, d50 < 1e-3 and d_stab < 1e-5 and d_routes < 1e-9,
                   f"E4[Z50]={v50:.8f} (limit {L.LIMIT_EZ:.8f}, diff {d50:.1e}), "
                   f"|n=100 - n=50|={d_stab:.1e}, closed-form route diff {d_routes:.1e}")
    assert ok


def test_c05_many_to_one(criterion):
    types = L.lamination_types(60)
    _, b_cf, _ = L.closed_form_vectors(types)
    zs = {}
    for n in (3, 6):
        zs[f"geometric n={n}"] = verify_many_to_one(GEO, n=n, R=10**5, seed=n).z
        zs[f"lamination n={n}"] = verify_many_to_one(LAM, b_values=b_cf, b_types=types, x0=4, n=n,
                                                     R=10**5, seed=n).z
    ok = criterion(5, all(abs(z) < 3 for z in zs.values()),
                   ", ".join(f"{k} z={v:+.2f}" for k, v in zs.items()))
    assert ok


def test_c06_half_normal_marginals(criterion, lam60):
    geo = half_normal_test(height_marginals(GEO, 10**4, [1.0], 2000, seed=0)[1.0], math.sqrt(2))
    eig = lam60["eig"]
    rp = reduced_params(eig.a[0], eig.b[0], lam60["eta2"])
    scale = 2 * rp["mu"] / math.sqrt(rp["sigma2"]) * math.sqrt(1 / rp["m"])
    direct = 2 / math.sqrt(lam60["eta2"])
    rel = abs(scale - direct) / direct
    lam = half_normal_test(height_marginals(LAM, 10**4, [1.0], 2000, seed=0, x0=4,
                                            route="reduced")[1.0], scale)
    ok = criterion(6, geo.passed and lam.passed and rel <= 1e-12,
                   f"geometric D={geo.observed:.4f} p={geo.p_value:.3f}; reduced lamination "
                   f"D={lam.observed:.4f} p={lam.p_value:.3f} scale={scale:.12f}; "
                   f"scale vs 2/eta rel diff {rel:.1e}")
    assert ok


def test_c07_survival(criterion):
    geo = survival_estimate(GEO, 200, 5 * 10**5, seed=0)
    geo_ok = 0.9 <= geo.observed <= 1.1
    ns = [100, 200, 400]
    rep = survival_constant_report(LAM, 4, ns, 5 * 10**5, seed=0,
                                   candidates={"2b4/eta2": L.SURVIVAL_LIMIT,
                                               "2/eta2": L.SURVIVAL_ALT},
                                   exact=L.survival_exact(ns))
    fit = rep["fit"]
    ok = criterion(7, geo_ok and rep["pass"],
                   f"geometric n*P={geo.observed:.4f}; lamination c={fit['c']:.2f} "
                   f"CI [{fit['ci'][0]:.2f}, {fit['ci'][1]:.2f}], consistent={rep['consistent']}, "
                   f"excluded={rep['excluded']}, verdict: {rep['verdict']}")
    assert ok


def test_c08_drift(criterion):
    lo, hi = 10, 500
    types = spectral.retained_types(LAM, 4, hi - 4 + 1 + 60)
    M = spectral.mean_matrix(LAM, types).M
    eig = spectral.solve_eigenvectors(M, allow_underflow=True)
    p = spectral.spine_kernel(M, eig.b).p
    rep = spectral.drift_check(p, types, 1.5, 0.1, range(4, 10), lo, hi, b=eig.b)
    ok = criterion(8, rep.passed,
                   f"min relative margin {rep.relative_margins.min():.4f} on [{lo}, {hi}], "
                   f"1/b <= V everywhere: {bool(rep.side_condition.all())}")
    assert ok


def test_c09_closeness_trends(criterion, lam60):
    eig = lam60["eig"]
    rp = reduced_params(eig.a[0], eig.b[0], lam60["eta2"])
    rep = closeness_trend(LAM, rp["mu"], rp["m"], 10**3, 10**5, runs=10, seed=0, x0=4, min_runs=8)
    ok = criterion(9, rep["pass"],
                   f"both statistics smaller at 1e5 in {rep['both_decreased']}/10 runs "
                   f"(vertical {rep['vertical_decreased']}, horizontal {rep['horizontal_decreased']})")
    assert ok


# ---------------------------------------------------------------- calibration

def _calibrate(criterion, label, reject):
    runs = 500
    k = sum(bool(reject(i, seeding.stream(77, i))) for i in range(runs))
    rate = k / runs
    ok = criterion(10, 0.002 <= rate <= 0.025, f"{k}/{runs} rejections at 1% ({rate:.1%})",
                   label=label)
    assert ok


def test_c10_calibration_ks(criterion):
    _calibrate(criterion, "half-normal KS",
               lambda i, rng: not half_normal_test(half_normal_synthetic(1.3, 2000, rng), 1.3).passed)


def test_c10_calibration_mto(criterion):
    _calibrate(criterion, "many-to-one z",
               lambda i, rng: not verify_many_to_one(GEO, n=3, R=4000, seed=1000 + i,
                                                     z_threshold=Z99).passed)


def test_c10_calibration_chain_chi2(criterion, lam60):
    types, b = lam60["types"], lam60["eig"].b
    p = L.kernel_closed(types)
    tilt = MultitypeTilt(LAM, types, b)

    def reject(i, rng):
        chain = spine_type_paths(tilt, 4, 20, 200, rng)
        return transition_chi2(chain, p, types)[2] < 0.01

    _calibrate(criterion, "spine chain chi-square", reject)


def test_c10_calibration_wilson(criterion):
    def reject(i, rng):
        k = int(rng.binomial(20_000, 0.012))
        lo, hi = wilson_interval(k, 20_000, 0.99)
        return not lo <= 0.012 <= hi

    _calibrate(criterion, "Wilson interval", reject)


def test_c10_calibration_moment_z(criterion):
    law = ReducedLeafedLaw(LAM, 4)

    def reject(i, rng):
        c, bits, _ = law.sample_children(2000, rng)
        ones = np.bincount(np.repeat(np.arange(2000), c), weights=bits, minlength=2000)
        ms = moment_summary(ones)
        return abs(ms["mean"] - 1.0) / ms["mean_se"] > Z99

    _calibrate(criterion, "moment z", reject)


# ---------------------------------------------------------------- determinism

def test_c11_determinism(criterion, tmp_path):
    configs = {
        "verify-mto": ["verify-mto", "--law", "builtin:lamination", "--n", "3", "--R", "100000",
                       "--seed", "11"],
        "verify-scaling": ["verify-scaling", "--law", "builtin:lamination", "--n", "2000",
                           "--R", "1000", "--lanes", "250", "--seed", "11"],
        "survival": ["survival", "--law", "builtin:lamination", "--n", "100", "200",
                     "--R", "100000", "--seed", "11"],
    }
    same = {}
    for name, argv in configs.items():
        blobs = []
        for tag, threads in (("a", "1"), ("b", "1"), ("c", "8")):
            code = cli.main([*argv, "--threads", threads, "--out", str(tmp_path),
                             "--report", f"{name}-{tag}.json"])
            assert code in (0, 2)
            blobs.append((tmp_path / f"{name}-{tag}.json").read_bytes())
        json.loads(blobs[0])
        same[name] = blobs[0] == blobs[1] == blobs[2]
    ok = criterion(11, all(same.values()),
                   ", ".join(f"{k}: {'identical' if v else 'DIFFERENT'}" for k, v in same.items())
                   + " (two runs at 1 thread, one at 8)")
    assert ok
