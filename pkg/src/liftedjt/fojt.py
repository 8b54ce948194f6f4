"""First-order junction trees: construction, evidence, message passing, queries."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from . import lve
from .model import PM, PRV, ModelError, Parfactor

IN = "in"
OUT = "out"


class JtreeError(ModelError):
    """A structure violates one of the jtree properties."""


@dataclass(frozen=True)
class Parcluster:
    id: int
    prvs: tuple[PRV, ...]
    local: tuple[Parfactor, ...] = ()
    labels: frozenset[str] = frozenset()

    def has(self, prv: PRV) -> bool:
        return prv in self.prvs

    @property
    def logvars(self) -> set[str]:
        return {p for prv in self.prvs for p in prv.params}

    def __str__(self):
        return f"C{self.id}{{{', '.join(map(str, self.prvs))}}}"


@dataclass(frozen=True)
class FOJTree:
    clusters: dict[int, Parcluster]
    edges: frozenset[frozenset[int]] = frozenset()
    observed: tuple = ()  # ((PRV, constants), value) entered so far

    def ids(self) -> list[int]:
        return sorted(self.clusters)

    def neighbours(self, i: int) -> list[int]:
        return sorted(next(iter(e - {i})) for e in self.edges if i in e)

    def separator(self, i: int, j: int) -> tuple[PRV, ...]:
        other = set(self.clusters[j].prvs)
        return tuple(p for p in self.clusters[i].prvs if p in other)

    def labelled(self, label: str) -> int:
        for i in self.ids():
            if label in self.clusters[i].labels:
                return i
        raise KeyError(label)

    def holding(self, prv: PRV) -> int:
        """Smallest parcluster containing ``prv``; lowest id on ties."""
        cands = [i for i in self.ids() if self.clusters[i].has(prv)]
        if not cands:
            raise ModelError(f"PRV {prv} does not occur in the jtree")
        return min(cands, key=lambda i: (len(self.clusters[i].prvs), i))

    def with_local(self, local: dict[int, Sequence[Parfactor]]) -> "FOJTree":
        clusters = dict(self.clusters)
        for i, fs in local.items():
            clusters[i] = replace(clusters[i], local=tuple(fs))
        return FOJTree(clusters, self.edges, self.observed)

    def retag(self, mapping: dict) -> "FOJTree":
        clusters = {
            i: replace(
                c,
                prvs=tuple(p.at(mapping.get(p.slice, p.slice)) for p in c.prvs),
                local=tuple(g.retag(mapping) for g in c.local),
            )
            for i, c in self.clusters.items()
        }
        observed = tuple(((p.at(mapping.get(p.slice, p.slice)), c), v) for (p, c), v in self.observed)
        return FOJTree(clusters, self.edges, observed)

    def dump(self) -> str:
        lines = []
        for i in self.ids():
            c = self.clusters[i]
            label = f" [{','.join(sorted(c.labels))}]" if c.labels else ""
            lines.append(f"C{i}{label}: {', '.join(map(str, c.prvs))}")
            for g in c.local:
                lines.append(f"  {g}")
        for e in sorted(tuple(sorted(e)) for e in self.edges):
            sep = self.separator(*e)
            lines.append(f"C{e[0]} -- C{e[1]}: {{{', '.join(map(str, sep))}}}")
        return "\n".join(lines)


# -- validation -------------------------------------------------------------


def violations(tree: FOJTree, model: Iterable[Parfactor] | None = None) -> list[str]:
    """Every breach of coverage, running intersection or tree shape."""
    out: list[str] = []
    ids = tree.ids()
    if not ids:
        return ["jtree has no parclusters"]
    for e in tree.edges:
        if len(e) != 2 or not e <= set(ids):
            out.append(f"malformed edge {sorted(e)}")
    if out:
        return out
    if len(tree.edges) != len(ids) - 1:
        out.append(f"{len(ids)} parclusters but {len(tree.edges)} edges")
    reach = _component(tree, ids[0], lambda _p: True)
    if reach != set(ids):
        out.append("jtree is not connected")
    for c in tree.clusters.values():
        names = {p.name for p in c.prvs}
        for g in c.local:
            for a in g.args:
                if a.prv not in c.prvs:
                    out.append(f"{g} assigned to C{c.id} but {a.prv} is missing")
                elif a.prv.name not in names:
                    out.append(f"{g} not covered by C{c.id}")
    if model is not None:
        assigned = [g for c in tree.clusters.values() for g in c.local]
        for g in model:
            n = sum(1 for h in assigned if h is g)
            if n != 1:
                out.append(f"parfactor {g} assigned {n} times")
    prvs = {p for c in tree.clusters.values() for p in c.prvs}
    for p in sorted(prvs, key=str):
        holders = {i for i in ids if tree.clusters[i].has(p)}
        start = min(holders)
        if _component(tree, start, lambda i, p=p: tree.clusters[i].has(p)) != holders:
            out.append(f"running intersection fails for {p}")
    return out


def _component(tree: FOJTree, start: int, admit) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        i = stack.pop()
        for n in tree.neighbours(i):
            if n not in seen and admit(n):
                seen.add(n)
                stack.append(n)
    return seen


def validate(tree: FOJTree, model: Iterable[Parfactor] | None = None) -> FOJTree:
    problems = violations(tree, model)
    if problems:
        raise JtreeError("; ".join(problems))
    return tree


# -- construction -----------------------------------------------------------


def _prv_order(parfactors: Sequence[Parfactor]) -> list[PRV]:
    seen: dict[PRV, None] = {}
    for g in parfactors:
        for a in g.args:
            seen.setdefault(a.prv, None)
    return list(seen)


def _min_fill_cliques(nodes: list[PRV], parfactors: Sequence[Parfactor]) -> list[set[PRV]]:
    rank = {p: n for n, p in enumerate(nodes)}
    nbrs: dict[PRV, set[PRV]] = {p: set() for p in nodes}
    for g in parfactors:
        ps = list(g.prvs)
        for a, b in itertools.combinations(ps, 2):
            nbrs[a].add(b)
            nbrs[b].add(a)
    remaining = set(nodes)
    cliques = []

    def fill(v):
        live = nbrs[v] & remaining
        return sum(1 for a, b in itertools.combinations(live, 2) if b not in nbrs[a])

    while remaining:
        v = min(remaining, key=lambda v: (fill(v), len(nbrs[v] & remaining), rank[v]))
        live = nbrs[v] & remaining
        for a, b in itertools.combinations(live, 2):
            nbrs[a].add(b)
            nbrs[b].add(a)
        cliques.append(live | {v})
        remaining.discard(v)
    return cliques


def build_fojt(model: PM | Sequence[Parfactor]) -> FOJTree:
    """FO jtree via min-fill over the PRV graph and a max-weight spanning tree."""
    parfactors = list(model.parfactors if isinstance(model, PM) else model)
    if not parfactors:
        raise ModelError("model has no parfactors")
    nodes = _prv_order(parfactors)
    rank = {p: n for n, p in enumerate(nodes)}
    raw = _min_fill_cliques(nodes, parfactors)
    maximal: list[set[PRV]] = []
    for c in raw:
        if any(c <= m for m in maximal):
            continue
        maximal = [m for m in maximal if not m <= c] + [c]
    maximal.sort(key=lambda c: min(rank[p] for p in c))
    ordered = [tuple(sorted(c, key=rank.__getitem__)) for c in maximal]
    # Kruskal over separator sizes; zero-weight edges join components.
    cand = sorted(
        ((len(set(a) & set(b)), i, j) for (i, a), (j, b) in itertools.combinations(enumerate(ordered), 2)),
        key=lambda e: (-e[0], e[1], e[2]),
    )
    parent = list(range(len(ordered)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = set()
    for _w, i, j in cand:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            edges.add(frozenset((i + 1, j + 1)))
    local: dict[int, list[Parfactor]] = {i + 1: [] for i in range(len(ordered))}
    for g in parfactors:
        ps = g.prvs
        home = next(i + 1 for i, c in enumerate(ordered) if ps <= set(c))
        local[home].append(g)
    clusters = {i + 1: Parcluster(i + 1, c, tuple(local[i + 1])) for i, c in enumerate(ordered)}
    return validate(FOJTree(clusters, frozenset(edges)), parfactors)


# -- evidence ---------------------------------------------------------------


def enter_evidence(tree: FOJTree, observations: Iterable[tuple[PRV, tuple[str, ...], str]]) -> FOJTree:
    """Absorb observations into every local parfactor mentioning the PRV.

    Observations name PRVs as they appear in the tree (slice tag included).
    """
    by_prv: dict[PRV, dict[tuple[str, ...], str]] = {}
    for prv, consts, value in observations:
        if value not in prv.range:
            raise ModelError(f"value {value!r} outside range of {prv.name}")
        if not any(c.has(prv) for c in tree.clusters.values()):
            raise ModelError(f"evidence on unknown PRV {prv}")
        seen = by_prv.setdefault(prv, {})
        if seen.get(tuple(consts), value) != value:
            raise ModelError(f"conflicting evidence for {prv.name}{tuple(consts)}")
        seen[tuple(consts)] = value
    if not by_prv:
        return tree
    local = {}
    for i, c in tree.clusters.items():
        fs = list(c.local)
        for prv, obs in by_prv.items():
            fs = [p for g in fs for p in lve.absorb_evidence(g, prv, obs)]
        local[i] = fs
    seen = tuple(((prv, consts), v) for prv, obs in by_prv.items() for consts, v in obs.items())
    return replace(tree.with_local(local), observed=tree.observed + seen)


# -- message passing --------------------------------------------------------

Messages = dict  # (sender, receiver) -> tuple[Parfactor, ...]


def root_of(tree: FOJTree) -> int:
    return min(tree.ids(), key=lambda i: (-len(tree.neighbours(i)), i))


def schedule(tree: FOJTree, root: int | None = None) -> list[tuple[int, int]]:
    """Directed edges in inbound (leaves to root) then outbound order."""
    root = root_of(tree) if root is None else root
    order: list[tuple[int, int]] = []  # (parent, child) in preorder
    stack = [(root, None)]
    while stack:
        i, parent = stack.pop()
        if parent is not None:
            order.append((parent, i))
        for n in reversed(tree.neighbours(i)):
            if n != parent:
                stack.append((n, i))
    inbound = [(c, p) for p, c in reversed(order)]
    return inbound + order


def gather(tree: FOJTree, messages: Messages, i: int, exclude: int | None = None) -> list[Parfactor]:
    fs = list(tree.clusters[i].local)
    for n in tree.neighbours(i):
        if n != exclude:
            fs.extend(messages.get((n, i), ()))
    return fs


def message(tree: FOJTree, messages: Messages, i: int, j: int, counter: lve.GroundingCounter) -> tuple[Parfactor, ...]:
    sep = set(tree.separator(i, j))
    fs = gather(tree, messages, i, exclude=j)
    return tuple(lve.eliminate_all(fs, lambda k: k.prv in sep, counter))


def pass_messages(tree: FOJTree, counter: lve.GroundingCounter | None = None, root: int | None = None) -> Messages:
    counter = counter if counter is not None else lve.GroundingCounter()
    messages: Messages = {}
    for i, j in schedule(tree, root):
        messages[(i, j)] = message(tree, messages, i, j, counter)
    return messages


def answer_query(
    tree: FOJTree,
    messages: Messages,
    prv: PRV,
    constants: Sequence[str],
    counter: lve.GroundingCounter | None = None,
    cluster: int | None = None,
) -> np.ndarray:
    counter = counter if counter is not None else lve.GroundingCounter()
    i = tree.holding(prv) if cluster is None else cluster
    if not tree.clusters[i].has(prv):
        raise ModelError(f"C{i} does not contain {prv}")
    if len(constants) != len(prv.params):
        raise ModelError(f"query on {prv.name} needs {len(prv.params)} constants")
    for (p, c), v in tree.observed:
        if p == prv and c == tuple(constants):
            out = np.zeros(len(prv.range))
            out[prv.range.index(v)] = 1.0
            return out
    return lve.marginal(gather(tree, messages, i), prv, constants, counter)


__all__ = [
    "FOJTree",
    "IN",
    "JtreeError",
    "Messages",
    "OUT",
    "Parcluster",
    "answer_query",
    "build_fojt",
    "enter_evidence",
    "gather",
    "message",
    "pass_messages",
    "root_of",
    "schedule",
    "validate",
    "violations",
]
