"""Lifted dynamic junction trees: interface, J0/Jt, α messages, forward pass."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import fojt, lve
from .fojt import IN, OUT, FOJTree
from .model import CURR, PREV, PDM, PRV, Atom, Evidence, ModelError, Parfactor, QueryTemplate, atom_of


class EmptyInterfaceError(ModelError):
    pass


@dataclass(frozen=True)
class InterfaceSet:
    prvs: tuple[PRV, ...]  # tagged PREV
    expanded: tuple[PRV, ...] = ()

    def __post_init__(self):
        if set(self.prvs) & set(self.expanded):
            raise ModelError("expanded PRVs overlap the interface")

    @property
    def carried(self) -> tuple[PRV, ...]:
        return self.prvs + self.expanded

    def carried_at(self, tag) -> set[PRV]:
        return {p.at(tag) for p in self.carried}


@dataclass(frozen=True)
class TemporalStructures:
    pdm: PDM
    interface: InterfaceSet
    j0: FOJTree
    jt: FOJTree

    @property
    def j0_in(self) -> int:
        return self.j0.labelled(IN)

    @property
    def j0_out(self) -> int:
        return self.j0.labelled(OUT)

    @property
    def jt_in(self) -> int:
        return self.jt.labelled(IN)

    @property
    def jt_out(self) -> int:
        return self.jt.labelled(OUT)


@dataclass(frozen=True)
class AlphaMessage:
    step: int
    parfactors: tuple[Parfactor, ...]


@dataclass(frozen=True)
class Answer:
    step: int
    target: int
    term: str
    probs: tuple[float, ...]


@dataclass
class RunResult:
    answers: list[Answer] = field(default_factory=list)
    counter: lve.GroundingCounter = field(default_factory=lve.GroundingCounter)
    step_seconds: list[float] = field(default_factory=list)
    offline_seconds: float = 0.0
    structures: TemporalStructures | None = None
    report: object = None


def compute_interface(pdm: PDM) -> InterfaceSet:
    """PRVs of slice t-1 that share an inter-slice parfactor with slice t."""
    seen: dict[PRV, None] = {}
    for g in pdm.inter:
        tags = {a.prv.slice for a in g.args}
        if PREV not in tags or CURR not in tags:
            raise ModelError(f"inter-slice parfactor {g.name} must mention both slices")
        for a in g.args:
            if a.prv.slice == PREV:
                seen.setdefault(a.prv, None)
    if not seen:
        raise EmptyInterfaceError("empty interface: slices are disconnected")
    return InterfaceSet(tuple(seen))


def interface_parfactor(pdm: PDM, prvs: Sequence[PRV], name: str) -> Parfactor:
    atoms = tuple(atom_of(p, pdm.logvars) for p in prvs)
    return Parfactor(atoms, np.zeros(tuple(a.size for a in atoms)), name)


def _label(tree: FOJTree, g: Parfactor, label: str) -> FOJTree:
    i = next(i for i in tree.ids() if any(h is g for h in tree.clusters[i].local))
    c = tree.clusters[i]
    clusters = dict(tree.clusters)
    clusters[i] = replace(c, labels=c.labels | {label})
    return FOJTree(clusters, tree.edges)


def build_temporal_structures(pdm: PDM) -> TemporalStructures:
    iface = compute_interface(pdm)
    curr = [p.at(CURR) for p in iface.prvs]
    g0 = list(pdm.g0.parfactors)
    gi0 = interface_parfactor(pdm, curr, "gI0")
    j0 = fojt.build_fojt(g0 + [gi0])
    j0 = _label(_label(j0, gi0, IN), gi0, OUT)
    gi_prev = interface_parfactor(pdm, iface.prvs, "gI_prev")
    gi_curr = interface_parfactor(pdm, curr, "gI")
    intra = [g.retag({None: CURR}) for g in pdm.intra]
    jt = fojt.build_fojt([gi_prev, *pdm.inter, *intra, gi_curr])
    jt = _label(_label(jt, gi_prev, IN), gi_curr, OUT)
    return TemporalStructures(pdm, iface, fojt.validate(j0), fojt.validate(jt))


def _observations(obs) -> list:
    return [(prv.at(CURR), tuple(consts), value) for prv, consts, value in obs]


def forward_step(
    structures: TemporalStructures,
    alpha: AlphaMessage | None,
    observations=(),
    queries: Sequence[tuple[PRV, tuple[str, ...]]] = (),
    counter: lve.GroundingCounter | None = None,
) -> tuple[list[np.ndarray], AlphaMessage]:
    """One filtering step; queries name untagged PRVs of the current slice."""
    counter = counter if counter is not None else lve.GroundingCounter()
    observations = _observations(observations)
    if alpha is None:
        tree, out_id, step = structures.j0, structures.j0_out, 0
    else:
        tree, in_id, out_id, step = structures.jt, structures.jt_in, structures.jt_out, alpha.step + 1
        delivered = [g.retag({CURR: PREV}) for g in alpha.parfactors]
        tree = tree.with_local({in_id: [*tree.clusters[in_id].local, *delivered]})
    tree = fojt.enter_evidence(tree, observations)
    messages = fojt.pass_messages(tree, counter)
    answers = [fojt.answer_query(tree, messages, prv.at(CURR), consts, counter) for prv, consts in queries]
    keep = structures.interface.carried_at(CURR)
    # Absorbed instances would reappear unconstrained next step; pin them.
    pins = [_indicator(structures.pdm, *o) for o in observations if o[0] in keep]
    alpha_fs = lve.eliminate_all(fojt.gather(tree, messages, out_id) + pins, lambda k: k.prv in keep, counter)
    return answers, AlphaMessage(step, tuple(alpha_fs))


def _indicator(pdm: PDM, prv: PRV, consts: tuple[str, ...], value: str) -> Parfactor:
    lvs = tuple(pdm.logvars[x].restrict([c]) for x, c in zip(prv.params, consts))
    table = np.where(np.array(prv.range) == value, 0.0, -np.inf)
    return Parfactor((Atom(prv, lvs),), table, "obs")


def _prepare(pdm: PDM, evidence: Evidence | None, queries) -> tuple[Evidence, tuple[QueryTemplate, ...]]:
    evidence = pdm.evidence if evidence is None else evidence
    queries = tuple(pdm.queries if queries is None else queries)
    for q in queries:
        if q.prv.name not in pdm.prvs:
            raise ModelError(f"query on unknown PRV {q.prv.name}")
        if len(q.constants) != len(q.prv.params):
            raise ModelError(f"query {q.term} has wrong arity")
        for name, c in zip(q.prv.params, q.constants):
            if c not in pdm.logvars[name].domain:
                raise ModelError(f"constant {c} not in domain of {name}")
    return evidence, queries


def run(
    pdm: PDM,
    T: int,
    evidence: Evidence | None = None,
    queries: Sequence[QueryTemplate] | None = None,
    expand: bool = True,
    fuse: bool = True,
) -> RunResult:
    """Filtering (and prediction) for t = 0..T with the guard applied offline."""
    from . import guard

    if T < 0:
        raise ValueError("T must be >= 0")
    evidence, queries = _prepare(pdm, evidence, queries)
    result = RunResult()
    start = time.perf_counter()
    structures, report = guard.prevent_all(build_temporal_structures(pdm), expanding=expand, fusion=fuse)
    result.offline_seconds = time.perf_counter() - start
    result.structures, result.report = structures, report
    alpha = None
    filtering = [(q.prv, q.constants) for q in queries if q.lookahead == 0]
    ahead = [q for q in queries if q.lookahead > 0]
    for t in range(T + 1):
        tic = time.perf_counter()
        probs, alpha = forward_step(structures, alpha, evidence.at(t), filtering, result.counter)
        found = iter(probs)
        for q in queries:
            if q.lookahead == 0:
                result.answers.append(Answer(t, t, q.term, tuple(next(found))))
        for q in ahead:
            future = alpha
            for _ in range(q.lookahead - 1):
                _, future = forward_step(structures, future, (), (), result.counter)
            (p,), _ = forward_step(structures, future, (), [(q.prv, q.constants)], result.counter)
            result.answers.append(Answer(t, t + q.lookahead, q.term, tuple(p)))
        result.step_seconds.append(time.perf_counter() - tic)
    return result


# -- the unrolled baseline ---------------------------------------------------


def unroll_lifted(pdm: PDM, T: int) -> list[Parfactor]:
    """Parfactors of the T-step unrolled model with integer slice tags."""
    out = [g.retag({None: 0}) for g in pdm.intra]
    for t in range(1, T + 1):
        out += [g.retag({PREV: t - 1, CURR: t}) for g in pdm.inter]
        out += [g.retag({None: t}) for g in pdm.intra]
    return out


def ljt_on_unrolled(
    pdm: PDM,
    T: int,
    observations_upto: int,
    evidence: Evidence,
    terms: Sequence[tuple[PRV, tuple[str, ...]]],
    counter: lve.GroundingCounter,
    fuse: bool = True,
) -> list[np.ndarray]:
    """LJT on the model unrolled to ``T`` with evidence up to ``observations_upto``;
    answers queries on slice ``T``."""
    from . import guard

    tree = fojt.build_fojt(unroll_lifted(pdm, T))
    if fuse:
        tree = guard.fuse_intra(tree)
    obs = [(prv.at(t), tuple(c), v) for t in range(observations_upto + 1) for prv, c, v in evidence.at(t)]
    tree = fojt.enter_evidence(tree, obs)
    messages = fojt.pass_messages(tree, counter)
    return [fojt.answer_query(tree, messages, prv.at(T), consts, counter) for prv, consts in terms]


def run_unrolled(
    pdm: PDM,
    T: int,
    evidence: Evidence | None = None,
    queries: Sequence[QueryTemplate] | None = None,
    fuse: bool = True,
) -> RunResult:
    """Same answers as :func:`run`, each computed by LJT on an unrolled model.

    Filtering at t only sees slices up to t, so the model is unrolled
    separately for every target step.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    evidence, queries = _prepare(pdm, evidence, queries)
    result = RunResult()
    for t in range(T + 1):
        tic = time.perf_counter()
        groups: dict[int, list[QueryTemplate]] = {}
        for q in queries:
            groups.setdefault(q.lookahead, []).append(q)
        found: dict[int, np.ndarray] = {}
        for k, qs in groups.items():
            probs = ljt_on_unrolled(pdm, t + k, t, evidence, [(q.prv, q.constants) for q in qs], result.counter, fuse)
            for q, p in zip(qs, probs):
                found[id(q)] = p
        for q in queries:
            result.answers.append(Answer(t, t + q.lookahead, q.term, tuple(found[id(q)])))
        result.step_seconds.append(time.perf_counter() - tic)
    return result


__all__ = [
    "AlphaMessage",
    "Answer",
    "EmptyInterfaceError",
    "InterfaceSet",
    "RunResult",
    "TemporalStructures",
    "build_temporal_structures",
    "compute_interface",
    "forward_step",
    "interface_parfactor",
    "ljt_on_unrolled",
    "run",
    "run_unrolled",
    "unroll_lifted",
]
