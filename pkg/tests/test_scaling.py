import math

import numpy as np
import pytest
from scipy import stats

from gwforest import explore, scaling
from gwforest.errors import TruncationError
from gwforest import laminations as L
from gwforest.leafed import GeometricLeafedLaw, TableLeafedLaw, exploration_processes, \
    sample_leafed_forest

GEO = GeometricLeafedLaw(1.0)


def test_ks_statistic_matches_scipy():
    rng = np.random.default_rng(0)
    x = np.abs(rng.normal(0, 1.3, 500))
    D = scaling.ks_statistic(x, lambda v: scaling.half_normal_cdf(v, 1.3))
    assert D == pytest.approx(stats.kstest(x, stats.halfnorm(scale=1.3).cdf).statistic, abs=1e-14)


def test_ks_ties_form_single_jump():
    x = np.array([1.0, 1.0, 1.0, 2.0])
    D = scaling.ks_statistic(x, lambda v: np.clip(v / 4, 0, 1))
    # at v=1: below 0, at the jump 3/4, F=1/4 -> 1/2
    assert D == pytest.approx(0.5)


def test_half_normal_null_and_power():
    rng = np.random.default_rng(1)
    s = scaling.half_normal_synthetic(2.0, 2000, rng)
    assert scaling.half_normal_test(s, 2.0).passed
    assert not scaling.half_normal_test(s, 4.0).passed


def test_half_normal_input_validation():
    with pytest.raises(ValueError, match="R >= 100"):
        scaling.half_normal_test(np.ones(50), 1.0)
    with pytest.raises(ValueError, match="positive"):
        scaling.half_normal_test(np.ones(200), 0.0)
    with pytest.raises(ValueError, match="empty"):
        scaling.half_normal_test(np.array([]), 1.0)
    with pytest.raises(ValueError):
        scaling.MarginalSample(np.array([-1.0]), 1, 1.0, 1)


def test_prefix_sampler_agrees_with_forest_sampler():
    # weighted height at rank 60: lockstep prefix lanes vs whole sampled forests
    law = GeometricLeafedLaw(1.0, 0.5, length1={"dist": "exp", "mean": 1.0})
    p, lab, _, _ = explore.dfs_prefix(law.children_fn, law.fertile_fn, law.root, 61, 3000,
                                      np.random.default_rng(11))
    from gwforest import _kernels
    h1 = _kernels.prefix_heights(p, lab["length"])[:, 60]
    # the forest sampler must finish the last tree; the rare forests whose tree
    # passes 10^6 vertices (well under 1% of draws) are dropped
    h2 = []
    for i in range(3000):
        try:
            f = sample_leafed_forest(law, 61, seed=50_000 + i, hard_cap=10**6)
        except TruncationError:
            continue
        h2.append(exploration_processes(f).H_ell[60])
    assert len(h2) > 2960
    assert stats.ks_2samp(h1, np.array(h2)).pvalue >= 0.01


def test_height_marginals_scale_mc():
    # at n = 10^4 the lattice and finite-size bias sit well below the KS resolution of R = 2000
    ms = scaling.height_marginals(GEO, 10**4, [0.5, 1.0], 2000, seed=0)
    assert set(ms) == {0.5, 1.0}
    assert scaling.half_normal_test(ms[1.0], math.sqrt(2)).passed
    assert scaling.half_normal_test(ms[0.5], math.sqrt(2) * math.sqrt(0.5)).passed


def test_marginal_csv(tmp_path):
    ms = scaling.height_marginals(GEO, 50, [1.0], 200, seed=2)
    ms[1.0].to_csv(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "replicate,value"


def test_wilson_interval_coverage():
    rng = np.random.default_rng(0)
    p, R = 0.02, 2000
    k = rng.binomial(R, p, 2000)
    cover = np.mean([lo <= p <= hi for lo, hi in (scaling.wilson_interval(int(x), R) for x in k)])
    assert 0.93 <= cover <= 0.97


def test_survival_geometric():
    rep = scaling.survival_estimate(GEO, 100, 100_000, seed=5)
    assert rep.reference == pytest.approx(1.0)
    assert rep.ci[0] < rep.observed < rep.ci[1]
    assert 0.85 < rep.observed < 1.15


def test_survival_refuses_bad_input():
    chain = TableLeafedLaw([(1.0, [(1, 1.0)])])
    with pytest.raises(ValueError, match="degenerate"):
        scaling.survival_estimate(chain, 100, 10**4, seed=0)
    with pytest.raises(ValueError, match="n must be"):
        scaling.survival_estimate(GEO, 10, 10**4, seed=0)
    with pytest.raises(ValueError, match="R must be"):
        scaling.survival_estimate(GEO, 100, 10, seed=0)


def test_survival_multitype_matches_exact():
    rep = scaling.survival_estimate(L.LaminationLaw(), 60, 50_000, seed=1, x0=4)
    exact = 60 * L.survival_exact([60])[60]
    assert abs(rep.observed - exact) < 4 * rep.details["se"]


def test_extrapolation_recovers_exact_limit():
    # exact values at n = 100, 200, 400 with tiny error bars: the log-corrected
    # model lands near the limit while the pure 1/n model undershoots
    ns = np.array([100, 200, 400])
    ex = L.survival_exact(ns)
    y = np.array([n * ex[n] for n in ns])
    fit = scaling.extrapolate_survival(ns, y, np.full(3, 0.01))
    assert abs(fit["c"] - L.SURVIVAL_LIMIT) < 0.1
    assert fit["inv_n_fit"]["c"] < L.SURVIVAL_LIMIT - 0.5
    # the exact curve is consistent at the error bars of R = 5e5 replicates
    P = np.array([ex[n] for n in ns])
    se = ns * np.sqrt(P * (1 - P) / 5e5)
    assert scaling.extrapolate_survival(ns, y, se)["consistent"]


def test_extrapolation_flags_inconsistency():
    fit = scaling.extrapolate_survival([100, 200, 400], [10.0, 20.0, 10.0], [0.1, 0.1, 0.1])
    assert not fit["consistent"]


def test_closeness_trivial_leafing():
    law = TableLeafedLaw([(0.5, []), (0.5, [(1, 1.0), (1, 1.0)])])
    tr = scaling.prefix_traces(law, 2001, 2, seed=0)[0]
    rep = scaling.closeness_report(tr, 1.0, 1.0, 2000)
    assert rep["vertical"] == 0.0 and rep["horizontal"] <= 1 / 2000 + 1e-15


def test_closeness_matches_full_trace():
    f = sample_leafed_forest(GeometricLeafedLaw(1.0, 0.5), 500, seed=3)
    tr = exploration_processes(f)
    tr2 = scaling.trace_from_prefix(f.forest.parent_rank(), f.bit[f.forest.dfs],
                                    f.length[f.forest.dfs])
    assert np.array_equal(tr.H_ell, tr2.H_ell) and np.array_equal(tr.phi, tr2.phi)
    assert np.array_equal(tr.H_one, tr2.H_one) and np.array_equal(tr.psi, tr2.psi)


def test_closeness_power_doubled_mu():
    # same traces under the right and a doubled mu: the wrong constant leaves an O(1) gap
    cf = L.closed_forms(4)
    mu, m = 1 / (cf["a"] * cf["b"]), 1 / cf["a"]
    kw = dict(n_small=300, n_large=30_000, runs=6, seed=1, x0=4)
    good = scaling.closeness_trend(L.LaminationLaw(), mu, m, **kw)
    bad = scaling.closeness_trend(L.LaminationLaw(), 2 * mu, m, **kw)
    g = [r["large"]["vertical"] for r in good["runs"]]
    b = [r["large"]["vertical"] for r in bad["runs"]]
    assert min(b) > 2 * max(g)


def test_hypothesis_report_bounded_law():
    law = TableLeafedLaw([(0.5, []), (0.5, [(1, 1.0), (1, 2.0), (0, 3.0)])])
    rep = scaling.hypothesis_H_report(law, 10, [1, 2, 4, 8], seed=0)
    assert rep["H_02"]["verdict"] == "exactly satisfied (bounded support)"
    assert rep["H_02"]["curve"][-1] == 0.0 and not rep["H_12"]["flag"]
    assert rep["H_c"]["pass"]


def test_hypothesis_report_pareto_flag():
    law = GeometricLeafedLaw(1.0, length1={"dist": "pareto", "alpha": 1.5})
    rep = scaling.hypothesis_H_report(law, 200_000, np.geomspace(1, 200, 12), seed=1)
    assert rep["H_12"]["flag"]
    c = np.array(rep["H_12"]["curve"])
    assert c[-1] > c[0]


def test_hypothesis_report_geometric():
    rep = scaling.hypothesis_H_report(GEO, 200_000, [1.0, 2.0, 3.0], seed=2)
    assert rep["H_c"]["pass"]
    lo, hi = rep["H_c2"]["ci"]
    assert lo <= 2.0 <= hi and rep["H_c2"]["positive"]


def test_hypothesis_grid_validation():
    with pytest.raises(ValueError):
        scaling.hypothesis_H_report(GEO, 100, [2.0, 1.0], seed=0)


def test_horizontal_uses_running_count():
    # dfs: root, c1, c3 (child of c1), c2 sterile child of root
    tr = scaling.trace_from_prefix(np.array([-1, 0, 1, 0]), np.array([1, 1, 1, 0]), np.ones(4))
    assert tr.phi.tolist() == [0, 1, 2, 0]
    rep = scaling.closeness_report(tr, 1.0, 1.0, 3)
    assert rep["horizontal"] == pytest.approx(1 / 3)
    assert rep["horizontal_parent_phi"] == pytest.approx(1.0)
