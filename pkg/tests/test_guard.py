import numpy as np
import pytest

from helpers import MODELS, assert_jtree, gex
from liftedjt import fojt, guard, ldjt, oracle
from liftedjt.guard import SymArg
from liftedjt.model import CURR, PREV, PRV, ModelError, load_model

HOT = PRV("Hot").at(CURR)
DOR = PRV("DoR", ("X",)).at(CURR)
ATTC = PRV("AttC", ("A",)).at(CURR)
PUB = PRV("Pub", ("X", "P")).at(CURR)


def prevented(path, **kw):
    pdm = load_model(path)
    return guard.prevent_all(ldjt.build_temporal_structures(pdm), **kw)


def test_symbolic_parfactor():
    g = gex().g0.parfactors[0]
    assert guard.sym(g) == frozenset({SymArg(PUB), SymArg(ATTC), SymArg(HOT)})
    assert SymArg(PUB, "X").lv == {"P"}
    assert str(SymArg(ATTC, "A")) == "#A[AttC@t(A)]"


def test_separator_logvars_subset():
    g0 = [PUB, ATTC, HOT]
    assert guard.check_eq1([PUB, HOT], ATTC, g0) == {PUB: False, HOT: True}
    with pytest.raises(ModelError):
        guard.check_eq1([HOT], DOR, g0)


def test_single_convertible_excess_logvar():
    assert guard.check_eq2(PUB, ATTC, [PUB, ATTC, HOT]) is None  # two excess logvars
    assert guard.check_eq2(DOR, ATTC, [DOR, ATTC, HOT]) == "X"
    shared = [SymArg(DOR), SymArg(PRV("Q", ("X",)).at(CURR)), SymArg(ATTC)]
    assert guard.check_eq2(DOR, ATTC, shared) is None  # X sits in two arguments


def test_convertible():
    assert guard.convertible("X", [SymArg(DOR), SymArg(HOT)])
    assert not guard.convertible("X", [SymArg(DOR, "X")])
    assert not guard.convertible("X", [SymArg(DOR), SymArg(PUB)])


def test_alignment_on_a_static_tree():
    tree = fojt.build_fojt(gex().g0)
    (i, j) = sorted(next(iter(tree.edges)))
    # AttC counted over A arrives at a parcluster where A only sits in AttC.
    assert guard.check_eq3(tree, ATTC, "A", (i, j))
    assert guard.check_eq3(tree, ATTC, "A", (j, i))


def test_gex_report_expands_attc():
    s, report = prevented(MODELS / "gex.lmf")
    assert report.actions == [("EXPAND", "AttC@t-1(A)")]
    assert report.irreducible == []
    assert [str(p) for p in s.interface.expanded] == ["AttC@t-1(A)"]
    assert s.interface.expanded[0] in s.jt.clusters[s.jt_in].prvs
    text = report.render()
    assert text.count("EXPAND AttC@t-1(A)") == 1
    assert "IRREDUCIBLE" not in text and guard.G_S_NOTE in text
    assert all(guard.REASONS[2] in str(f) for f in report.inter_failures)


def test_gex_without_expanding_keeps_the_failure():
    s, report = prevented(MODELS / "gex.lmf", expanding=False)
    assert report.actions == [] and report.inter_failures
    assert s.interface.expanded == ()


def test_lifted_model_needs_nothing():
    _, report = prevented(MODELS / "lifted.lmf")
    assert report.actions == [] and report.irreducible == []
    assert "no actions" in report.render()


def test_irreducible_model_is_diagnosed():
    _, report = prevented(MODELS / "irreducible.lmf")
    assert report.irreducible
    (prv, why) = report.irreducible[0]
    assert prv.name == "S" and "inter-slice parfactor" in why
    assert "IRREDUCIBLE" in report.render()


def test_fusion_model_fuses_both_trees():
    s, report = prevented(MODELS / "fusion.lmf")
    kinds = [k for k, _ in report.actions]
    assert kinds == ["FUSE", "FUSE"] and report.irreducible == []
    assert_jtree(s.j0)
    assert_jtree(s.jt)
    pdm = load_model(MODELS / "fusion.lmf")
    assert ldjt.run(pdm, 3).counter.events == 0
    assert ldjt.run(pdm, 3, fuse=False).counter.events > 0


def test_fused_answers_stay_exact():
    pdm = load_model(MODELS / "fusion.lmf", seed=4)
    for a in ldjt.run(pdm, 2).answers:
        q = next(q for q in pdm.queries if q.term == a.term)
        np.testing.assert_allclose(a.probs, oracle.answer(pdm, q.at(a.step)), rtol=1e-9)


def test_fuse_merges_adjacent_clusters():
    g0 = gex().g0
    tree = fojt.build_fojt(g0)
    (i, j) = sorted(next(iter(tree.edges)))
    fused = guard.fuse(tree, j, i)
    assert fused.ids() == [i]
    assert len(fused.clusters[i].local) == 2
    assert_jtree(fused, g0.parfactors)


def test_fuse_rejects_non_adjacent():
    tree = ldjt.build_temporal_structures(gex()).jt
    ids = tree.ids()
    pair = next((a, b) for a in ids for b in ids if a < b and frozenset((a, b)) not in tree.edges)
    with pytest.raises(ModelError, match="not adjacent"):
        guard.fuse(tree, *pair)


def test_fuse_keeps_labels():
    s = ldjt.build_temporal_structures(gex())
    i, o = s.jt_in, s.jt_out
    if frozenset((i, o)) in s.jt.edges:
        fused = guard.fuse(s.jt, i, o)
        c = fused.clusters[min(i, o)]
        assert {"in", "out"} <= c.labels


def test_expand_adds_prv_to_in_cluster():
    s = ldjt.build_temporal_structures(gex())
    report = guard.GroundingReport()
    e = ATTC.at(PREV)
    s2 = guard.expand(s, ATTC, report)
    assert e in s2.jt.clusters[s2.jt_in].prvs
    assert s2.interface.expanded == (e,)
    assert report.actions[0] == ("EXPAND", "AttC@t-1(A)")
    assert_jtree(s2.jt)
    with pytest.raises(ModelError, match="already occurs"):
        guard.expand(s2, ATTC)


def test_fuse_intra_on_unrolled_model_is_valid():
    pdm = load_model(MODELS / "fusion.lmf")
    model = ldjt.unroll_lifted(pdm, 2)
    report = guard.GroundingReport()
    tree = guard.fuse_intra(fojt.build_fojt(model), report)
    assert_jtree(tree, model)
    assert all(k == "FUSE" for k, _ in report.actions)


def test_symbolic_alpha_carries_interface():
    s, _ = prevented(MODELS / "gex.lmf")
    _, ct = guard._contexts(s)
    alpha = guard.sym_alpha(ct)
    prvs = {a.prv for f in alpha for a in f}
    assert prvs <= set(s.interface.carried)
    counted = {a.prv.name: a.counted for f in alpha for a in f if a.counted}
    assert counted.get("AttC") in (None, "A")
