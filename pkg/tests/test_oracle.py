import numpy as np
import pytest

from helpers import gex, random_pdm
from liftedjt import oracle
from liftedjt.model import Evidence, ModelError, QueryTemplate


def test_unrolled_gex_sizes():
    pdm = gex()
    g1 = oracle.unroll(pdm, 1)
    assert len(g1.variables) == 18
    assert len(oracle.unroll(pdm, 0).variables) == 9
    # every step repeats the slice factors; gH adds one factor per Pub instance
    per_step = len(oracle.unroll(pdm, 0).factors)
    inter = 4  # gH over Pub(X,P)
    assert len(oracle.unroll(pdm, 3).factors) == 4 * per_step + 3 * inter
    with pytest.raises(ValueError):
        oracle.unroll(pdm, -1)


def test_unrolled_factors_link_consecutive_steps():
    g = oracle.unroll(gex(), 2)
    links = [vs for vs, _ in g.factors if len({v[1] for v in vs}) == 2]
    assert links and all({v[1] for v in vs} in ({0, 1}, {1, 2}) for vs in links)


def test_single_factor_normalises():
    g = oracle.GroundFactorGraph()
    g.add(("Hot",), np.array([2.0, 3.0]))
    np.testing.assert_allclose(oracle.ground_ve(g, "Hot"), [0.4, 0.6])


def test_declared_sizes_must_agree():
    g = oracle.GroundFactorGraph()
    g.add(("a",), np.ones(2))
    with pytest.raises(ModelError):
        g.add(("a",), np.ones(3))


@pytest.mark.parametrize("seed", range(8))
def test_ground_ve_equals_enumeration(seed):
    rng = np.random.default_rng(seed)
    g = oracle.GroundFactorGraph()
    names = [f"v{i}" for i in range(int(rng.integers(4, 13)))]
    sizes = {v: int(rng.choice([2, 2, 3])) for v in names}
    for _ in range(len(names) + 2):
        k = int(rng.integers(1, 4))
        vs = tuple(rng.choice(names, size=k, replace=False).tolist())
        g.add(vs, 0.05 + rng.random(tuple(sizes[v] for v in vs)))
    q = names[0]
    ev = {names[-1]: 0} if len(names) > 2 and names[-1] in g.variables else {}
    if q not in g.variables:
        return
    np.testing.assert_allclose(oracle.ground_ve(g, q, ev), oracle.enumerate_marginal(g, q, ev), rtol=1e-12)


def test_enumeration_matches_on_gex():
    pdm = gex().with_potentials(3)
    g = oracle.unroll(pdm, 0)
    for v in g.variables:
        np.testing.assert_allclose(oracle.ground_ve(g, v), oracle.enumerate_marginal(g, v), rtol=1e-12)


def test_evidence_consistency():
    pdm = random_pdm(5, evidence=False)
    g = oracle.unroll(pdm, 1)
    variables = list(g.variables)
    e, q = variables[0], variables[-1]
    conditioned = oracle.ground_ve(g, q, {e: 1})
    # slicing by hand and marginalising must agree
    sliced = oracle.GroundFactorGraph()
    for vs, t in g.factors:
        if e in vs:
            t = np.take(t, 1, axis=vs.index(e))
            vs = tuple(v for v in vs if v != e)
        if vs:
            sliced.add(vs, t)
    np.testing.assert_allclose(conditioned, oracle.ground_ve(sliced, q), rtol=1e-12)


def test_observed_query_is_a_point_mass():
    g = oracle.unroll(gex(), 0)
    v = next(iter(g.variables))
    np.testing.assert_array_equal(oracle.ground_ve(g, v, {v: 1}), [0.0, 1.0])


def test_unknown_variables_rejected():
    g = oracle.unroll(gex(), 0)
    with pytest.raises(ModelError):
        oracle.ground_ve(g, ("Nope", 0, ()))
    with pytest.raises(ModelError):
        oracle.ground_ve(g, ("Hot", 0, ()), {("Nope", 0, ()): 0})


def test_zero_probability_evidence():
    g = oracle.GroundFactorGraph()
    g.add(("a", "b"), np.array([[1.0, 0.0], [0.0, 1.0]]))
    g.add(("a",), np.array([0.0, 1.0]))
    with pytest.raises(ModelError, match="zero probability"):
        oracle.ground_ve(g, "b", {"a": 0})


def test_cost_cap(monkeypatch):
    monkeypatch.setattr(oracle, "MAX_COST", 10)
    with pytest.raises(oracle.OracleTooLarge):
        oracle.ground_ve(oracle.unroll(gex(), 2), ("Hot", 2, ()))


def test_answer_uses_evidence_up_to_horizon():
    pdm = gex().with_potentials(2)
    hot = pdm.prvs["Hot"]
    ev = Evidence({1: ((hot, (), "true"),), 3: ((hot, (), "false"),)})
    q = QueryTemplate(hot, (), 1).at(1)  # P(Hot_2 | e_0:1)
    full = oracle.answer(pdm, q, ev)
    only = oracle.answer(pdm, q, Evidence({1: ev.at(1)}))
    np.testing.assert_allclose(full, only)
    filtered = oracle.answer(pdm, QueryTemplate(hot, ()).at(3), ev)
    np.testing.assert_array_equal(filtered, [1.0, 0.0])
