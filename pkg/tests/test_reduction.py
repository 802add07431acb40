import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gwforest.errors import TruncationError
from gwforest.laminations import E2M1, ETA2, LaminationLaw, closed_forms
from gwforest.leafed import LeafedForest, exploration_processes
from gwforest.multitype import MultitypeForest, TableMultitypeLaw, sample_multitype_forest
from gwforest.reduction import (ReducedLeafedLaw, ReducedTree, optional_line, optional_line_counts,
                                reduce, reduced_params, verify_prop1, write_reduced_csv)
from gwforest.tree import build_forest

A, B = 0, 1


def mtree(parents, types, children=None):
    return MultitypeForest(build_forest(parents, children), np.array(types, np.int64), types[0])


def example():
    # root(A) with children v1(B), v2(A); v1 has child v3(A)
    return mtree([-1, 0, 0, 1], [A, B, A, A], children=[[1, 2], [3], [], []])


def test_optional_line_examples():
    t = example()
    assert optional_line(t, 2, A) == ([], [])
    chain = mtree([-1, 0, 1], [A, B, A])
    assert optional_line(chain, 0, A) == ([1, 2], [2])
    star = mtree([-1, 0, 0, 0], [A, A, A, A])
    assert optional_line(star, 0, A) == ([1, 2, 3], [1, 2, 3])
    with pytest.raises(IndexError):
        optional_line(star, 9, A)


def test_four_node_example():
    rt = reduce(example(), A)
    lf = rt.leafed
    tr = exploration_processes(lf)
    # ranks: root, v1, v3, v2
    assert lf.bit[lf.forest.dfs].tolist() == [1, 0, 1, 1]
    assert lf.length[lf.forest.dfs].tolist() == [0, 1, 2, 1]
    assert lf.forest.parent_rank().tolist() == [-1, 0, 0, 0]
    assert tr.H_ell.tolist() == [0, 1, 2, 1]
    assert rt.correspondence.tolist() == [0, 1, 3, 2]
    assert verify_prop1(example(), A) == (True, None)


def test_single_root():
    rt = reduce(mtree([-1], [A]))
    assert rt.leafed.n_nodes == 1 and rt.leafed.bit.tolist() == [1]


def test_no_x0_below_root():
    t = mtree([-1, 0, 1, 1], [A, B, B, B])
    lf = reduce(t, A).leafed
    assert lf.forest.parent_rank().tolist() == [-1, 0, 0, 0]
    assert lf.bit[lf.forest.dfs].tolist() == [1, 0, 0, 0]
    assert lf.length[lf.forest.dfs].tolist() == [0, 1, 2, 2]


def test_root_type_mismatch():
    with pytest.raises(ValueError, match="root type"):
        reduce(mtree([-1, 0], [B, A]), A)


def test_swapped_children_detected():
    t = example()
    rt = reduce(t, A)
    lf = rt.leafed
    # swap the first two children of the root (lengths 1 and 2)
    f2 = build_forest([-1, 0, 0, 0], children=[[2, 1, 3], [], [], []])
    bad = ReducedTree(LeafedForest(f2, lf.bit, lf.length), None, A)
    ok, rank = verify_prop1(t, A, reduced=bad)
    assert not ok and rank == 1


def brute_check(t, x0, rt):
    """Children of every bit-1 vertex are its bush, with bits and lengths from the definition."""
    fo = t.forest
    lf = rt.leafed
    corr = rt.correspondence
    inv = np.empty_like(corr)
    inv[corr] = np.arange(corr.size)
    for r in range(lf.n_nodes):
        if lf.bit[r] != 1:
            assert lf.forest.children(r).size == 0
            continue
        u = int(corr[r])
        Bset, Lset = optional_line(t, u, x0)
        kids = lf.forest.children(r)
        assert [int(corr[k]) for k in kids] == Bset
        assert sum(int(lf.bit[k]) for k in kids) == len(Lset)
        for k in kids:
            assert lf.length[k] == fo.generation[corr[k]] - fo.generation[u]


@given(st.integers(0, 2**31 - 1))
def test_lamination_property(seed):
    try:
        t = sample_multitype_forest(LaminationLaw(), 4, 200, seed=seed, hard_cap=3000)
    except TruncationError as err:
        t = err.partial
    rt = reduce(t, 4)
    assert verify_prop1(t, 4, reduced=rt) == (True, None)
    assert int((rt.leafed.bit == 1).sum()) == int((t.types == 4).sum())
    if t.n_nodes <= 400:
        brute_check(t, 4, rt)


@given(st.integers(0, 2**31 - 1), st.integers(2, 5))
def test_random_table_law_property(seed, n_types):
    rng = np.random.default_rng(seed)
    rules = {}
    for x in range(n_types):
        outs = []
        for _ in range(3):
            outs.append((1 / 3, rng.integers(0, n_types, rng.integers(0, 3)).tolist()))
        rules[x] = outs
    law = TableMultitypeLaw(rules)
    try:
        t = sample_multitype_forest(law, 0, 50, seed=seed, hard_cap=500)
    except TruncationError as err:
        t = err.partial
    rt = reduce(t, 0)
    assert verify_prop1(t, 0, reduced=rt)[0]
    brute_check(t, 0, rt)


def test_reduced_params_examples():
    cf = closed_forms(4)
    rp = reduced_params(cf["a"], cf["b"], ETA2)
    assert rp["m"] == pytest.approx(3.0, rel=1e-14)
    assert rp["mu"] == pytest.approx(3 * E2M1 / 4, rel=1e-14)
    assert rp["sigma2"] == pytest.approx(0.6, rel=1e-14)
    assert reduced_params(1.0, 1.0, 0.7) == {"m": 1.0, "mu": 1.0, "sigma2": 0.7}
    assert abs(rp["sigma2"] * cf["a"] * cf["b"] ** 2 - ETA2) < 1e-15
    with pytest.raises(ValueError):
        reduced_params(0.0, 1.0, 0.1)
    vec = reduced_params(np.array([0.5, cf["a"]]), np.array([1.0, cf["b"]]), ETA2, x0=4,
                         types=np.array([3, 4]))
    assert vec == rp


def test_optional_line_counts_deterministic_law():
    law = TableMultitypeLaw({0: [(1.0, [1, 0])], 1: [(1.0, [0, 2])], 2: [(1.0, [])]})
    N, Z = optional_line_counts(law, 0, 0, 5, np.random.default_rng(0))
    # bush of a type-0 vertex: (1, 0) then under 1: (0, 2) -> 4 members, 2 of type 0
    assert N.tolist() == [4] * 5 and Z.tolist() == [2] * 5


def test_reduced_law_matches_reduce_on_deterministic_law():
    law = TableMultitypeLaw({0: [(1.0, [1, 2])], 1: [(1.0, [2, 0])], 2: [(1.0, [])]})
    c, bits, lens = ReducedLeafedLaw(law, 0).sample_children(3, np.random.default_rng(0))
    try:
        sample_multitype_forest(law, 0, 1, seed=0, hard_cap=20)
    except TruncationError as err:
        t = err.partial
    lf = reduce(t, 0).leafed
    kids = lf.forest.children(int(lf.forest.dfs[0]))
    assert c.tolist() == [kids.size] * 3
    assert bits[:c[0]].tolist() == lf.bit[kids].tolist()
    assert lens[:c[0]].tolist() == lf.length[kids].tolist()


def test_reduced_law_vs_reducing_sampled_trees():
    # root offspring count of T: bush sampler vs reducing independent sampled trees
    law = LaminationLaw()
    c, bits, _ = ReducedLeafedLaw(law, 4).sample_children(20_000, np.random.default_rng(1))
    f = sample_multitype_forest(law, 4, 60_000, seed=2, hard_cap=10**7)
    lf = reduce(f, 4).leafed
    root_counts = lf.forest.child_count()[lf.forest.roots]
    se = math.hypot(c.std() / math.sqrt(c.size), root_counts.std() / math.sqrt(root_counts.size))
    assert abs(c.mean() - root_counts.mean()) < 4 * se


def test_reduced_csv(tmp_path):
    rt = reduce(example(), A)
    write_reduced_csv(tmp_path / "r.csv", rt)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "node_id,parent_id,tree_index,type_tag,length,t_node_id"
    assert len(lines) == 5
