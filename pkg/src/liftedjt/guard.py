"""Offline grounding prevention.

Message computations are simulated symbolically: a parfactor is reduced to
its arguments, each a PRV plus an optional counted logvar.  Three checks
decide whether eliminating a PRV E keeps a separator PRV S lifted:

* ``lv(S) ⊆ lv(E)``;
* otherwise exactly one excess logvar L, count-convertible in g^E;
* and every parcluster receiving the counted S either forwards it or can
  count-convert L in its own parfactors on S.

Failures inside one tree are repaired by fusing the two parclusters of the
offending edge.  Failures when computing α are repaired by adding E to the
in-cluster of Jt, so that α carries E instead of eliminating it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from . import fojt
from .fojt import IN, OUT, FOJTree, Parcluster
from .ldjt import InterfaceSet, TemporalStructures
from .model import CRV, CURR, PREV, PRV, ModelError, Parfactor

G_S_NOTE = "note: g^S is read as the receiving parcluster's local parfactors on S"


@dataclass(frozen=True)
class SymArg:
    prv: PRV
    counted: str | None = None

    @property
    def lv(self) -> frozenset[str]:
        return frozenset(self.prv.params) - {self.counted}

    def __str__(self):
        return f"#{self.counted}[{self.prv}]" if self.counted else str(self.prv)


SymFactor = frozenset  # of SymArg


def sym(g: Parfactor | Iterable) -> SymFactor:
    if isinstance(g, Parfactor):
        return frozenset(SymArg(a.prv, a.counted.name if isinstance(a, CRV) else None) for a in g.args)
    return frozenset(a if isinstance(a, SymArg) else SymArg(a) for a in g)


def _args(gE) -> set[SymArg]:
    """Arguments of a (symbolic) parfactor or of the product of several."""
    if isinstance(gE, Parfactor):
        return set(sym(gE))
    items = list(gE)
    if items and all(isinstance(x, (SymArg, PRV)) for x in items):
        return set(sym(items))
    out: set[SymArg] = set()
    for f in items:
        out |= _args(f)
    return _merge_forms(out)


def _merge_forms(args: set[SymArg]) -> set[SymArg]:
    # After alignment a PRV present in counted form stays counted.
    counted = {a.prv for a in args if a.counted}
    return {a for a in args if a.counted or a.prv not in counted}


def _find(args: set[SymArg], prv: PRV) -> SymArg | None:
    return next((a for a in args if a.prv == prv), None)


def convertible(l: str, args: Iterable[SymArg]) -> bool:
    holders = [a for a in args if l in a.lv]
    return len(holders) == 1 and holders[0].counted is None


def check_eq1(sep_prvs: Iterable[PRV], e: PRV, gE) -> dict[PRV, bool]:
    """For each separator PRV in g^E: is lv(S) ⊆ lv(E)?"""
    args = _args(gE)
    ea = _find(args, e)
    if ea is None:
        raise ModelError(f"{e} does not occur in g^E")
    sep = set(sep_prvs)
    return {a.prv: a.lv <= ea.lv for a in args if a.prv in sep and a.prv != e}


def check_eq2(s: PRV, e: PRV, gE) -> str | None:
    """The single excess logvar of S if it is count-convertible in g^E."""
    args = _args(gE)
    sa, ea = _find(args, s), _find(args, e)
    if sa is None or ea is None:
        raise ModelError("S and E must both occur in g^E")
    excess = sa.lv - ea.lv
    if len(excess) != 1:
        return None
    (l,) = excess
    return l if convertible(l, args) else None


# -- symbolic message passing -------------------------------------------------


@dataclass
class Context:
    """A tree plus what it receives from outside: α at the in-cluster, and
    (for temporal trees) where α goes next."""

    tree: FOJTree
    extra: dict[int, list[SymFactor]] = field(default_factory=dict)
    keep: set[PRV] | None = None  # carried PRVs at CURR; None for static trees
    onward: "Context | None" = None
    name: str = "J"

    def local(self, i: int) -> list[SymFactor]:
        return [sym(g) for g in self.tree.clusters[i].local] + list(self.extra.get(i, ()))


def sym_eliminate(factors: Sequence[SymFactor], elim: Sequence[PRV], sep: set[PRV], on_step=None) -> list[SymFactor]:
    fs = list(factors)
    for e in elim:
        holding = [f for f in fs if any(a.prv == e for a in f)]
        if not holding:
            continue
        fs = [f for f in fs if not any(a.prv == e for a in f)]
        merged = _args(holding)
        if on_step is not None:
            on_step(e, merged)
        ea = _find(merged, e)
        new = set()
        for a in merged:
            if a.prv == e:
                continue
            if a.prv in sep and not a.lv <= ea.lv:
                excess = a.lv - ea.lv
                if len(excess) == 1 and a.counted is None and convertible(next(iter(excess)), merged):
                    a = SymArg(a.prv, next(iter(excess)))
            new.add(a)
        if new:
            fs.append(frozenset(new))
    return fs


def sym_messages(ctx: Context) -> dict[tuple[int, int], list[SymFactor]]:
    tree = ctx.tree
    msgs: dict[tuple[int, int], list[SymFactor]] = {}
    for i, j in fojt.schedule(tree):
        msgs[(i, j)] = _sym_message(ctx, msgs, i, j)
    return msgs


def _incoming(ctx: Context, msgs, i: int, exclude: int | None = None) -> list[SymFactor]:
    fs = ctx.local(i)
    for n in ctx.tree.neighbours(i):
        if n != exclude:
            fs.extend(msgs.get((n, i), ()))
    return fs


def _sym_message(ctx: Context, msgs, i: int, j: int, on_step=None) -> list[SymFactor]:
    sep = set(ctx.tree.separator(i, j))
    elim = [p for p in ctx.tree.clusters[i].prvs if p not in sep]
    return sym_eliminate(_incoming(ctx, msgs, i, j), elim, sep, on_step)


def sym_alpha(ctx: Context) -> list[SymFactor]:
    """Symbolic α leaving the out-cluster, re-tagged for the next step."""
    out = ctx.tree.labelled(OUT)
    msgs = sym_messages(ctx)
    keep = ctx.keep or set()
    elim = [p for p in ctx.tree.clusters[out].prvs if p not in keep]
    fs = sym_eliminate(_incoming(ctx, msgs, out), elim, keep)
    return [frozenset(SymArg(a.prv.at(PREV), a.counted) for a in f) for f in fs]


# -- alignment along the path of a counted separator PRV -----------------------


@dataclass(frozen=True)
class AlignmentFailure:
    tree: str
    cluster: int
    prv: PRV
    logvar: str
    g_s: frozenset

    @property
    def inter_slice(self) -> bool:
        """g^S holds S in both slices, as in an inter-slice parfactor."""
        names = [a.prv for a in self.g_s if a.prv.name == self.prv.name]
        return len({p.slice for p in names}) > 1


def _align_path(ctx: Context, s: PRV, l: str, receiver: int, sender: int | None, path: set[int] | None = None,
         visited: set | None = None, budget: list | None = None) -> AlignmentFailure | None:
    visited = set() if visited is None else visited
    frontier = [(ctx, receiver, sender, s)]
    while frontier:
        c, k, frm, s_here = frontier.pop()
        if (c.name, k, s_here) in visited:
            continue
        visited.add((c.name, k, s_here))
        if budget is not None:
            budget[0] += 1
        args = {a for f in c.local(k) if any(a.prv == s_here for a in f) for a in f}
        needed = False
        for n in c.tree.neighbours(k):
            if n == frm or (path is not None and c is ctx and n not in path):
                continue
            if s_here in c.tree.separator(k, n):
                frontier.append((c, n, k, s_here))
            else:
                needed = True
        if c.keep is not None and OUT in c.tree.clusters[k].labels:
            if s_here in c.keep and c.onward is not None:
                nxt = c.onward
                frontier.append((nxt, nxt.tree.labelled(IN), None, s_here.at(PREV)))
            else:
                needed = True
        if needed and not _can_align(l, s_here, args):
            return AlignmentFailure(c.name, k, s_here, l, frozenset(args))
    return None


def _can_align(l: str, s: PRV, args: set[SymArg]) -> bool:
    """Can local atoms of ``s`` be count-converted on ``l`` to meet #l[s]?"""
    holders = [a for a in args if l in a.lv]
    return not holders or (len(holders) == 1 and holders[0].prv == s and holders[0].counted is None)


def check_eq3(j: FOJTree | Context, s: PRV, l: str, path) -> bool:
    """Whether a counted S over L can travel from ``path[0]`` to ``path[1]``
    and beyond without grounding.  ``path`` is a directed edge, or a longer
    sequence of parcluster ids restricting the traversal."""
    ctx = j if isinstance(j, Context) else Context(j)
    path = list(path)
    restrict = set(path) if len(path) > 2 else None
    return _align_path(ctx, s, l, path[1], path[0], restrict) is None


# -- detection ---------------------------------------------------------------


@dataclass(frozen=True)
class IntraFailure:
    tree: str
    edge: tuple[int, int]
    prv: PRV
    separator_prv: PRV
    eq: int
    located: AlignmentFailure | None = None

    def __str__(self):
        where = ""
        if self.located is not None:
            where = f" at {self.located.tree}:C{self.located.cluster}"
        return (f"INTRA {self.tree} C{self.edge[0]}->C{self.edge[1]} eliminating {self.prv} "
                f"grounds {self.separator_prv} ({REASONS[self.eq]}){where}")


@dataclass(frozen=True)
class InterFailure:
    boundary: str
    prv: PRV
    separator_prv: PRV
    eq: int
    located: AlignmentFailure | None = None

    def __str__(self):
        return f"INTER {self.boundary} eliminating {self.prv} grounds {self.separator_prv} ({REASONS[self.eq]})"


REASONS = {2: "no count-convertible excess logvar", 3: "count-conversion cannot be aligned downstream"}


def _check_elimination(ctx, factors, elim, sep, start, budget) -> list[tuple[PRV, PRV, int, AlignmentFailure | None]]:
    """Run the three checks on every elimination of a message computation.
    ``start`` returns (context, receiver, sender, retag) for the counted S."""
    found = []

    def on_step(e, merged):
        ea = _find(merged, e)
        for a in sorted(merged, key=str):
            if a.prv not in sep or a.prv == e or a.lv <= ea.lv:
                continue
            budget[0] += 1
            excess = a.lv - ea.lv
            if len(excess) != 1 or not convertible(next(iter(excess)), merged):
                if a.counted is None:
                    found.append((e, a.prv, 2, None))
                continue
            if a.counted is not None:
                continue
            l = next(iter(excess))
            c, receiver, sender, tag = start
            s_next = a.prv if tag is None else a.prv.at(tag)
            miss = _align_path(c, s_next, l, receiver, sender, budget=budget)
            if miss is not None:
                found.append((e, a.prv, 3, miss))

    sym_eliminate(factors, elim, sep, on_step)
    return found


def detect_intra(ctx: Context, budget: list | None = None) -> list[IntraFailure]:
    budget = [0] if budget is None else budget
    tree = ctx.tree
    msgs = sym_messages(ctx)
    out = []
    for i, j in fojt.schedule(tree):
        sep = set(tree.separator(i, j))
        elim = [p for p in tree.clusters[i].prvs if p not in sep]
        for e, s, eq, miss in _check_elimination(ctx, _incoming(ctx, msgs, i, j), elim, sep, (ctx, j, i, None), budget):
            out.append(IntraFailure(ctx.name, (i, j), e, s, eq, miss))
    return out


def detect_inter(ctx: Context, budget: list | None = None) -> list[InterFailure]:
    """Failures when the out-cluster of ``ctx`` computes α for ``ctx.onward``."""
    budget = [0] if budget is None else budget
    tree = ctx.tree
    out_id = tree.labelled(OUT)
    msgs = sym_messages(ctx)
    keep = ctx.keep or set()
    elim = [p for p in tree.clusters[out_id].prvs if p not in keep]
    nxt = ctx.onward
    start = (nxt, nxt.tree.labelled(IN), None, PREV)
    return [
        InterFailure(f"{ctx.name}->{nxt.name}", e, s, eq, miss)
        for e, s, eq, miss in _check_elimination(ctx, _incoming(ctx, msgs, out_id), elim, keep, start, budget)
    ]


# -- structure changes -------------------------------------------------------


def fuse(j: FOJTree, ci: int, cj: int) -> FOJTree:
    if frozenset((ci, cj)) not in j.edges:
        raise ModelError(f"C{ci} and C{cj} are not adjacent")
    keep_id, gone = min(ci, cj), max(ci, cj)
    a, b = j.clusters[keep_id], j.clusters[gone]
    prvs = a.prvs + tuple(p for p in b.prvs if p not in a.prvs)
    merged = Parcluster(keep_id, prvs, a.local + b.local, a.labels | b.labels)
    clusters = {i: c for i, c in j.clusters.items() if i != gone}
    clusters[keep_id] = merged
    edges = set()
    for e in j.edges:
        e2 = frozenset(keep_id if x == gone else x for x in e)
        if len(e2) == 2:
            edges.add(e2)
    return fojt.validate(FOJTree(clusters, frozenset(edges)))


@dataclass
class GroundingReport:
    intra_failures: list[IntraFailure] = field(default_factory=list)
    inter_failures: list[InterFailure] = field(default_factory=list)
    actions: list[tuple[str, str]] = field(default_factory=list)
    irreducible: list[tuple[PRV, str]] = field(default_factory=list)
    checks: int = 0

    def add_irreducible(self, prv: PRV, diagnosis: str):
        if all(p != prv for p, _ in self.irreducible):
            self.irreducible.append((prv, diagnosis))

    def render(self) -> str:
        lines = [str(f) for f in self.intra_failures] + [str(f) for f in self.inter_failures]
        lines += [f"{kind} {what}" for kind, what in self.actions]
        if not self.actions:
            lines.append("no actions")
        lines += [f"IRREDUCIBLE {p}: {why}" for p, why in self.irreducible]
        lines.append(G_S_NOTE)
        return "\n".join(lines)


def _diagnose(miss: AlignmentFailure | None, default: str) -> str:
    if miss is not None and miss.inter_slice:
        return f"cannot count-convert {miss.prv} in the inter-slice parfactor"
    return default


def _fix_intra(ctx_of, tree: FOJTree, report: GroundingReport, protected=lambda f, t: False) -> FOJTree:
    """Fuse until no intra-tree failure can be repaired by fusion."""
    seen: set[str] = set()
    while True:
        ctx = ctx_of(tree)
        budget = [0]
        failures = detect_intra(ctx, budget)
        report.checks += budget[0]
        fixable = None
        for f in failures:
            if str(f) not in seen:
                seen.add(str(f))
                report.intra_failures.append(f)
            outside = f.located is not None and (f.located.tree != ctx.name or f.located.inter_slice)
            if outside or protected(f, tree):
                continue
            fixable = fixable or f
        if fixable is None:
            return tree
        i, j = fixable.edge
        tree = fuse(tree, i, j)
        report.actions.append(("FUSE", f"{ctx.name}:C{i}+C{j}"))


def fuse_intra(tree: FOJTree, report: GroundingReport | None = None) -> FOJTree:
    """Fusion for a static jtree."""
    return _fix_intra(lambda t: Context(t), tree, report or GroundingReport())


def _contexts(s: TemporalStructures, j0: FOJTree | None = None, jt: FOJTree | None = None) -> tuple[Context, Context]:
    j0 = s.j0 if j0 is None else j0
    jt = s.jt if jt is None else jt
    keep = s.interface.carried_at(CURR)
    c0 = Context(j0, {}, keep, None, "J0")
    alpha0 = sym_alpha(Context(j0, {}, keep, None, "J0"))
    in_id = jt.labelled(IN)
    alpha, ct = alpha0, None
    for _ in range(8):
        ct = Context(jt, {in_id: alpha}, keep, None, "Jt")
        nxt = sorted(set(alpha) | set(sym_alpha(ct)), key=lambda f: sorted(map(str, f)))
        if set(nxt) == set(alpha):
            break
        alpha = nxt
    ct.onward = Context(jt, {in_id: alpha}, keep, None, "Jt+1")
    ct.onward.onward = ct.onward  # α keeps flowing into identical copies
    c0.onward = Context(jt, {in_id: alpha0}, keep, None, "J1")
    c0.onward.onward = ct.onward
    return c0, ct


def expand(
    structures: TemporalStructures, e: PRV, report: GroundingReport | None = None, fusion: bool = True
) -> TemporalStructures:
    """Carry ``e`` (slice t-1) in α by adding it to the in-cluster of Jt."""
    report = report if report is not None else GroundingReport()
    e = e.at(PREV)
    jt = structures.jt
    if any(c.has(e) for c in jt.clusters.values()):
        raise ModelError(f"{e} already occurs in Jt")
    in_id = jt.labelled(IN)
    c = jt.clusters[in_id]
    clusters = dict(jt.clusters)
    clusters[in_id] = replace(c, prvs=c.prvs + (e,))
    jt = fojt.validate(FOJTree(clusters, jt.edges))
    iface = InterfaceSet(structures.interface.prvs, structures.interface.expanded + (e,))
    s = replace(structures, interface=iface, jt=jt)
    report.actions.append(("EXPAND", str(e)))
    return _repair_jt(s, report) if fusion else s


def _expanded_involved(s: TemporalStructures):
    names = {p.name for p in s.interface.expanded}

    def protected(f: IntraFailure, tree: FOJTree) -> bool:
        pair = {tree.labelled(IN), tree.labelled(OUT)}
        return set(f.edge) == pair and len(pair) == 2 and (f.prv.name in names or f.separator_prv.name in names)

    return protected


def _repair_jt(s: TemporalStructures, report: GroundingReport) -> TemporalStructures:
    protected = _expanded_involved(s)
    jt = _fix_intra(lambda t: _contexts(s, jt=t)[1], s.jt, report, protected)
    s = replace(s, jt=jt)
    for f in detect_intra(_contexts(s)[1]):
        if protected(f, jt):
            report.add_irreducible(f.prv, "in/out-cluster fusion cascade")
    return s


def prevent_all(
    structures: TemporalStructures, expanding: bool = True, fusion: bool = True
) -> tuple[TemporalStructures, GroundingReport]:
    """Intra-tree checks and fusion first, then inter-tree checks and expanding."""
    report = GroundingReport()
    s = structures
    if fusion:
        j0 = _fix_intra(lambda t: _contexts(s, j0=t)[0], s.j0, report)
        s = replace(s, j0=j0)
        s = _repair_jt(s, report)
    for _ in range(len({p.name for p in s.pdm.prvs.values()}) + 1):
        c0, ct = _contexts(s)
        budget = [0]
        failures = detect_inter(c0, budget) + detect_inter(ct, budget)
        report.checks += budget[0]
        for f in failures:
            if str(f) not in map(str, report.inter_failures):
                report.inter_failures.append(f)
        if not expanding:
            break
        new = []
        for f in failures:
            e = f.prv.at(PREV)
            if f.located is not None and f.located.inter_slice:
                report.add_irreducible(f.separator_prv, _diagnose(f.located, ""))
                continue
            if e in new:
                continue
            if e in s.interface.carried or any(c.has(e) for c in s.jt.clusters.values()):
                report.add_irreducible(f.prv, "still grounds after expanding")
                continue
            new.append(e)
        if not new:
            break
        for e in new:
            s = expand(s, e, report, fusion)
    if fusion:
        for f in detect_intra(_contexts(s)[0]) + detect_intra(_contexts(s)[1]):
            if f.located is not None and (f.located.tree != f.tree or f.located.inter_slice):
                report.add_irreducible(f.separator_prv, _diagnose(f.located, "grounds in a later slice"))
    fojt.validate(s.j0)
    fojt.validate(s.jt)
    return s, report


__all__ = [
    "Context",
    "AlignmentFailure",
    "REASONS",
    "GroundingReport",
    "InterFailure",
    "IntraFailure",
    "SymArg",
    "check_eq1",
    "check_eq2",
    "check_eq3",
    "convertible",
    "detect_inter",
    "detect_intra",
    "expand",
    "fuse",
    "fuse_intra",
    "prevent_all",
    "sym",
    "sym_alpha",
    "sym_eliminate",
    "sym_messages",
]
