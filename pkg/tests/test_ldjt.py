import dataclasses

import numpy as np
import pytest

from helpers import assert_jtree, gex, random_pdm
from liftedjt import ldjt, oracle
from liftedjt.fojt import IN, OUT
from liftedjt.model import CURR, PREV, PDM, Evidence, ModelError, QueryTemplate, parse_model


def close_to_oracle(pdm, result, queries=None, rtol=1e-9):
    queries = {q.term: q for q in (queries or pdm.queries)}
    for a in result.answers:
        q = queries[a.term]
        want = oracle.answer(pdm, dataclasses.replace(q, lookahead=a.target - a.step).at(a.step))
        np.testing.assert_allclose(a.probs, want, rtol=rtol, atol=1e-15, err_msg=f"{a}")


def test_gex_interface():
    iface = ldjt.compute_interface(gex())
    assert {str(p) for p in iface.prvs} == {"Hot@t-1", "Pub@t-1(X,P)"}
    assert iface.expanded == ()


def test_empty_interface_rejected():
    pdm = gex()
    with pytest.raises(ldjt.EmptyInterfaceError):
        ldjt.compute_interface(dataclasses.replace(pdm, inter=()))


def test_interface_and_expanded_must_be_disjoint():
    iface = ldjt.compute_interface(gex())
    with pytest.raises(ModelError):
        ldjt.InterfaceSet(iface.prvs, iface.prvs[:1])


def test_temporal_structures_are_labelled_jtrees():
    s = ldjt.build_temporal_structures(gex())
    assert_jtree(s.j0)
    assert_jtree(s.jt)
    assert s.j0_in == s.j0_out
    curr = s.interface.carried_at(CURR)
    assert curr <= set(s.j0.clusters[s.j0_out].prvs)
    assert curr <= set(s.jt.clusters[s.jt_out].prvs)
    assert set(s.interface.prvs) <= set(s.jt.clusters[s.jt_in].prvs)
    assert IN in s.jt.clusters[s.jt_in].labels and OUT in s.jt.clusters[s.jt_out].labels


def test_interface_parfactor_is_neutral():
    pdm = gex()
    g = ldjt.interface_parfactor(pdm, ldjt.compute_interface(pdm).prvs, "gI")
    assert not g.log_table.any()


def test_alpha_covers_only_carried_prvs():
    pdm = gex()
    s = ldjt.build_temporal_structures(pdm)
    _, alpha = ldjt.forward_step(s, None)
    carried = s.interface.carried_at(CURR)
    assert alpha.step == 0
    assert alpha.parfactors and all(a.prv in carried for g in alpha.parfactors for a in g.args)
    _, alpha = ldjt.forward_step(s, alpha)
    assert alpha.step == 1


@pytest.mark.parametrize("seed", range(4))
def test_filtering_and_prediction_match_the_oracle(seed):
    pdm = gex().with_potentials(seed)
    hot, attc = pdm.prvs["Hot"], pdm.prvs["AttC"]
    ev = Evidence({1: ((hot, (), "true"),), 2: ((attc, ("a2",), "false"),)})
    queries = list(pdm.queries) + [QueryTemplate(hot, (), 2), QueryTemplate(attc, ("a1",), 1)]
    result = ldjt.run(pdm, 3, evidence=ev, queries=queries)
    assert len(result.answers) == 4 * len(queries)
    assert result.counter.events == 0
    for a in result.answers:
        q = next(q for q in queries if q.term == a.term and q.lookahead == a.target - a.step)
        np.testing.assert_allclose(a.probs, oracle.answer(pdm, q.at(a.step), ev), rtol=1e-9)


def test_observed_query_is_a_point_mass():
    pdm = gex()
    hot = pdm.prvs["Hot"]
    result = ldjt.run(pdm, 1, evidence=Evidence({1: ((hot, (), "false"),)}))
    (a,) = [a for a in result.answers if a.step == 1 and a.term == "Hot"]
    assert a.probs == (1.0, 0.0)


def test_evidence_on_interface_instances_persists():
    # An observed interface instance must stay fixed for the following steps.
    text = """
    domain X = { x1 }
    domain Y = { y1, y2, y3 }
    prv R0
    prv R1(X) range {a, b, c}
    prv R2(X, Y)
    parfactor g0 [R0, R2(X,Y), R1(X)] table random
    parfactor g1 [R0, R2(X,Y)] table random
    slice parfactor h0 [R2(X,Y)@0, R1(X)@1] table random
    query R0 ; R1(x1) ; R2(x1,y1)
    evidence t=1 { R2(x1,y2)=false }
    """
    pdm = parse_model(text, seed=79)
    close_to_oracle(pdm, ldjt.run(pdm, 4))


@pytest.mark.parametrize("seed", range(0, 60, 3))
def test_random_models_match_the_oracle(seed):
    pdm = random_pdm(seed)
    close_to_oracle(pdm, ldjt.run(pdm, seed % 4 + 1))


@pytest.mark.parametrize("seed", range(1, 40, 4))
def test_unrolled_baseline_agrees(seed):
    pdm = random_pdm(seed)
    T = seed % 4
    a, b = ldjt.run(pdm, T), ldjt.run_unrolled(pdm, T)
    assert [(x.step, x.term) for x in a.answers] == [(x.step, x.term) for x in b.answers]
    for x, y in zip(a.answers, b.answers):
        np.testing.assert_allclose(x.probs, y.probs, rtol=1e-9, atol=1e-15)


def test_unroll_lifted_tags_steps():
    pdm = gex()
    gs = ldjt.unroll_lifted(pdm, 2)
    assert len(gs) == 3 * len(pdm.intra) + 2 * len(pdm.inter)
    assert {a.prv.slice for g in gs for a in g.args} == {0, 1, 2}


def test_gex_extended_run_is_lifted():
    result = ldjt.run(gex(X=4, P=2, A=5).with_potentials(2), 5)
    assert result.counter.events == 0
    assert [str(p) for p in result.structures.interface.expanded] == ["AttC@t-1(A)"]
    assert len(result.step_seconds) == 6 and result.offline_seconds > 0


def test_original_version_grounds_on_gex():
    result = ldjt.run(gex(X=4, P=2, A=5).with_potentials(2), 3, expand=False)
    assert result.counter.events > 0
    assert result.structures.interface.expanded == ()


def test_run_argument_checks():
    pdm = gex()
    with pytest.raises(ValueError):
        ldjt.run(pdm, -1)
    with pytest.raises(ValueError):
        ldjt.run_unrolled(pdm, -1)
    bad = QueryTemplate(pdm.prvs["DoR"], ("x9",))
    with pytest.raises(ModelError, match="not in domain"):
        ldjt.run(pdm, 0, queries=[bad])
    with pytest.raises(ModelError, match="arity"):
        ldjt.run(pdm, 0, queries=[QueryTemplate(pdm.prvs["DoR"], ())])


def test_inter_parfactor_must_span_both_slices():
    pdm = gex()
    gh = pdm.inter[0]
    only_prev = gh.retag({CURR: PREV})
    broken = PDM(pdm.logvars, pdm.prvs, pdm.intra, (only_prev,), pdm.queries)
    with pytest.raises(ModelError, match="both slices"):
        ldjt.compute_interface(broken)
