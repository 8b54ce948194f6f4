"""Ground-truth inference by unrolling and propositional variable elimination.

Nothing here touches the lifted kernel: grounding, table products and
elimination are implemented directly so the results can serve as an oracle.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Hashable

import numpy as np

from .model import PREV, PDM, Evidence, ModelError, Parfactor, Query

MAX_COST = 10**8


class OracleTooLarge(RuntimeError):
    pass


@dataclass
class GroundFactorGraph:
    variables: dict[Hashable, int] = field(default_factory=dict)
    factors: list[tuple[tuple, np.ndarray]] = field(default_factory=list)

    def add(self, variables: tuple, table: np.ndarray):
        for v, n in zip(variables, table.shape):
            if self.variables.setdefault(v, n) != n:
                raise ModelError(f"variable {v} declared with two range sizes")
        self.factors.append((variables, table))


def _ground_into(graph: GroundFactorGraph, g: Parfactor, step_of):
    names: list[str] = []
    domains: dict[str, tuple[str, ...]] = {}
    for a in g.args:
        for x in a.lvs:
            if x.name not in domains:
                names.append(x.name)
                domains[x.name] = x.domain
    table = np.exp(g.log_table)
    for consts in itertools.product(*(domains[n] for n in names)):
        theta = dict(zip(names, consts))
        vs = tuple((a.prv.name, step_of(a.prv.slice), tuple(theta[p] for p in a.prv.params)) for a in g.args)
        graph.add(vs, table)


def unroll(pdm: PDM, T: int) -> GroundFactorGraph:
    """Ground G0 at step 0 and the two-slice model once per step 1..T.
    Variables are ``(prv name, step, constants)``."""
    if T < 0:
        raise ValueError("T must be >= 0")
    graph = GroundFactorGraph()
    for g in pdm.intra:
        _ground_into(graph, g, lambda _tag: 0)
    for t in range(1, T + 1):
        for g in pdm.inter:
            _ground_into(graph, g, lambda tag, t=t: t - 1 if tag == PREV else t)
        for g in pdm.intra:
            _ground_into(graph, g, lambda _tag, t=t: t)
    return graph


def evidence_map(pdm: PDM, evidence: Evidence, upto: int) -> dict:
    out = {}
    for t, obs in evidence.steps.items():
        if t > upto:
            continue
        for prv, consts, value in obs:
            out[(prv.name, t, tuple(consts))] = prv.range.index(value)
    return out


def _condition(graph: GroundFactorGraph, evidence: dict) -> list[tuple[tuple, np.ndarray]]:
    for v in evidence:
        if v not in graph.variables:
            raise ModelError(f"unknown evidence variable {v}")
    out = []
    for vs, t in graph.factors:
        if any(v in evidence for v in vs):
            idx = tuple(evidence.get(v, slice(None)) for v in vs)
            t = t[idx]
            vs = tuple(v for v in vs if v not in evidence)
        out.append((vs, t))
    return out


def _product_sum(factors, keep: tuple) -> np.ndarray:
    """Multiply factors and sum out everything not in ``keep``."""
    ids: dict = {}
    operands = []
    for vs, t in factors:
        operands.append(t)
        operands.append([ids.setdefault(v, len(ids)) for v in vs])
    out = [ids[v] for v in keep]
    return np.einsum(*operands, out)


def elimination_order(factors, query) -> list:
    """Greedy min-degree order over the interaction graph."""
    nbrs: dict = {}
    for vs, _ in factors:
        for v in vs:
            nbrs.setdefault(v, set()).update(w for w in vs if w != v)
    order = []
    remaining = set(nbrs) - {query}
    while remaining:
        v = min(remaining, key=lambda v: (len(nbrs[v] & (remaining | {query})), repr(v)))
        live = nbrs[v] & (remaining | {query})
        for a in live:
            nbrs[a] |= live - {a}
        remaining.discard(v)
        order.append(v)
    return order


def ground_ve(graph: GroundFactorGraph, query, evidence: dict | None = None) -> np.ndarray:
    """Exact marginal of ``query`` given ``evidence`` (variable -> value index)."""
    if query not in graph.variables:
        raise ModelError(f"unknown query variable {query}")
    evidence = evidence or {}
    if query in evidence:
        out = np.zeros(graph.variables[query])
        out[evidence[query]] = 1.0
        return out
    factors = _condition(graph, evidence)
    order = elimination_order(factors, query)
    sizes = graph.variables
    cost = 0
    pool = list(factors)
    for v in order:
        touching = [f for f in pool if v in f[0]]
        pool = [f for f in pool if v not in f[0]]
        scope = tuple(dict.fromkeys(w for vs, _ in touching for w in vs))
        cost += int(np.prod([sizes[w] for w in scope]))
        if cost > MAX_COST:
            raise OracleTooLarge(f"estimated elimination cost exceeds {MAX_COST:.0e} entries")
        keep = tuple(w for w in scope if w != v)
        t = _product_sum(touching, keep)
        m = t.max()
        if m > 0:
            t = t / m
        pool.append((keep, t))
    result = np.ones(graph.variables[query])
    for vs, t in pool:
        if vs:
            result = result * _product_sum([(vs, t)], (query,))
        else:
            result = result * float(t)
    total = result.sum()
    if total <= 0:
        raise ModelError("evidence has zero probability")
    return result / total


def enumerate_marginal(graph: GroundFactorGraph, query, evidence: dict | None = None) -> np.ndarray:
    """Brute-force marginal over the full joint; small graphs only."""
    evidence = evidence or {}
    variables = list(graph.variables)
    if len(variables) > 20:
        raise OracleTooLarge("enumeration limited to small graphs")
    qi = variables.index(query)
    out = np.zeros(graph.variables[query])
    for assign in itertools.product(*(range(graph.variables[v]) for v in variables)):
        val = dict(zip(variables, assign))
        if any(val[v] != x for v, x in evidence.items()):
            continue
        p = 1.0
        for vs, t in graph.factors:
            p *= t[tuple(val[v] for v in vs)]
        out[assign[qi]] += p
    return out / out.sum()


def answer(pdm: PDM, query: Query, evidence: Evidence | None = None) -> np.ndarray:
    """P(query at its target time | evidence up to its horizon)."""
    evidence = evidence if evidence is not None else pdm.evidence
    graph = unroll(pdm, query.target_time)
    var = (query.prv.name, query.target_time, tuple(query.constants))
    return ground_ve(graph, var, evidence_map(pdm, evidence, query.evidence_horizon))


def answer_static(pm_parfactors, query_var, evidence: dict | None = None) -> np.ndarray:
    """Marginal for a static PM given as parfactors (slice tags kept as-is)."""
    graph = GroundFactorGraph()
    for g in pm_parfactors:
        _ground_into(graph, g, lambda tag: tag)
    return ground_ve(graph, query_var, evidence)


__all__ = [
    "GroundFactorGraph",
    "OracleTooLarge",
    "answer",
    "answer_static",
    "enumerate_marginal",
    "evidence_map",
    "ground_ve",
    "unroll",
]
