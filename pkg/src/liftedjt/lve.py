"""Lifted variable elimination kernel.

All operators are pure functions on immutable parfactors.  The only state
is a ``GroundingCounter`` that records every fallback to grounding.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .model import (
    CRV,
    Arg,
    Atom,
    Logvar,
    ModelError,
    Parfactor,
    PRV,
    histogram_matrix,
    histograms,
    log_multinomial,
)


class LiftingError(ModelError):
    """A lifted operator's precondition does not hold."""


@dataclass
class GroundingCounter:
    details: list[tuple[str, str]] = field(default_factory=list)

    @property
    def events(self) -> int:
        return len(self.details)

    def record(self, parfactor: str, logvar: str):
        self.details.append((parfactor, logvar))


def _size(lvs: Iterable[Logvar]) -> int:
    return math.prod(lv.size for lv in lvs)


def _expand(table: np.ndarray, args: Sequence[Arg], out_args: Sequence[Arg]) -> np.ndarray:
    """Broadcast ``table`` (axes = args) onto the axis order of ``out_args``."""
    present = [a for a in out_args if a in args]
    perm = [args.index(a) for a in present]
    t = np.transpose(table, perm) if perm != list(range(len(perm))) else table
    shape = [a.size if a in args else 1 for a in out_args]
    return t.reshape(shape)


def _normalised(g: Parfactor) -> Parfactor:
    t = g.log_table
    finite = t[np.isfinite(t)]
    if finite.size == 0 or not g.args:
        return g
    return Parfactor(g.args, t - finite.max(), g.name)


# -- core operators --------------------------------------------------------


def lifted_multiply(g1: Parfactor, g2: Parfactor) -> Parfactor:
    """Lifted product.  Logvars shared by object identity are unified; each
    side is corrected by the groundings of logvars only the other side has."""
    lv1, lv2 = g1.logvars, g2.logvars
    n1 = _size(lv2 - lv1)
    n2 = _size(lv1 - lv2)
    args = list(g1.args) + [a for a in g2.args if a not in g1.args]
    t1 = g1.log_table / n1 if n1 != 1 else g1.log_table
    t2 = g2.log_table / n2 if n2 != 1 else g2.log_table
    table = _expand(t1, list(g1.args), args) + _expand(t2, list(g2.args), args)
    parts = [n for g in (g1, g2) for n in g.name.split("*") if n]
    name = "*".join(sorted(set(parts)))
    return Parfactor(tuple(args), np.broadcast_to(table, tuple(a.size for a in args)).copy(), name)


def multiply_all(gs: Sequence[Parfactor]) -> Parfactor:
    return reduce(lifted_multiply, gs)


def lift_sum_out(g: Parfactor, target: Arg) -> Parfactor:
    """Sum ``target`` out of ``g``; requires lv(target) = lv(g)."""
    if target not in g.args:
        raise LiftingError(f"{target} is not an argument of {g}")
    if target.free != g.logvars:
        raise LiftingError(
            f"cannot sum out {target}: lv = {{{','.join(sorted(map(str, target.free)))}}} "
            f"but parfactor has {{{','.join(sorted(map(str, g.logvars)))}}}"
        )
    i = g.args.index(target)
    rest = g.args[:i] + g.args[i + 1 :]
    t = g.log_table
    if isinstance(target, CRV):
        w = log_multinomial(target.counted.size, len(target.prv.range))
        t = t + w.reshape([-1 if j == i else 1 for j in range(t.ndim)])
    with np.errstate(divide="ignore"):
        t = logsumexp(t, axis=i)
    remaining = frozenset().union(*(a.free for a in rest)) if rest else frozenset()
    r = _size(g.logvars - remaining)
    if r != 1:
        t = t * r
    return Parfactor(rest, np.asarray(t, dtype=float), g.name)


def count_convertible(g: Parfactor, x: Logvar) -> bool:
    holders = [a for a in g.args if x in a.free]
    return len(holders) == 1 and isinstance(holders[0], Atom)


def count_convert(g: Parfactor, x: Logvar) -> Parfactor:
    """Turn the single argument containing ``x`` into a CRV over ``x``."""
    holders = [i for i, a in enumerate(g.args) if x in a.free]
    if len(holders) != 1:
        raise LiftingError(f"cannot count-convert {x}: it occurs in {len(holders)} inputs of {g}")
    i = holders[0]
    a = g.args[i]
    if isinstance(a, CRV):
        raise LiftingError(f"cannot count-convert {x}: {a} is already a counting randvar")
    crv = CRV(a, a.lvs.index(x))
    h = histogram_matrix(x.size, len(a.prv.range))
    t = np.moveaxis(g.log_table, i, -1)[..., None, :]
    with np.errstate(invalid="ignore"):
        contrib = np.where(h > 0, t * h, 0.0)
    new = np.moveaxis(contrib.sum(-1), -1, i)
    args = g.args[:i] + (crv,) + g.args[i + 1 :]
    return Parfactor(args, new, g.name)


def ground_logvar(g: Parfactor, x: Logvar, counter: GroundingCounter | None = None) -> list[Parfactor]:
    """One parfactor per constant of ``x``; always succeeds, always recorded."""
    if x not in g.logvars:
        raise LiftingError(f"{x} is not a logvar of {g}")
    if counter is not None:
        counter.record(g.name, x.name)
    return split_logvar(g, x, [(c,) for c in x.domain])


def split_logvar(g: Parfactor, x: Logvar, blocks: Sequence[Sequence[str]]) -> list[Parfactor]:
    """Split the free occurrences of ``x`` into the given blocks."""
    out = []
    for b in blocks:
        nx = x.restrict(b)
        args = tuple(a.substitute(x, nx) for a in g.args)
        out.append(Parfactor(args, g.log_table, g.name))
    return out


def split_crv(g: Parfactor, i: int, blocks: Sequence[Sequence[str]]) -> Parfactor:
    """Split the counted logvar of CRV argument ``i`` into blocks.

    Single-constant blocks become plain atoms; the new table evaluates the
    old one at the summed histogram.
    """
    a = g.args[i]
    if not isinstance(a, CRV):
        raise LiftingError(f"{a} is not a counting randvar")
    k = len(a.prv.range)
    new_args: list[Arg] = []
    parts: list[list[tuple[int, ...]]] = []
    for b in blocks:
        sub = a.counted.restrict(b)
        lvs = tuple(sub if j == a.pos else lvar for j, lvar in enumerate(a.atom.lvs))
        atom = Atom(a.prv, lvs)
        if sub.size == 1:
            new_args.append(atom)
            parts.append([tuple(int(j == v) for j in range(k)) for v in range(k)])
        else:
            new_args.append(CRV(atom, a.pos))
            parts.append(list(histograms(sub.size, k)))
    index = {h: n for n, h in enumerate(a.histograms)}
    idx = np.empty([len(p) for p in parts], dtype=np.intp)
    for combo in itertools.product(*(range(len(p)) for p in parts)):
        total = tuple(sum(parts[b][c][j] for b, c in enumerate(combo)) for j in range(k))
        idx[combo] = index[total]
    t = np.take(g.log_table, idx, axis=i)
    args = g.args[:i] + tuple(new_args) + g.args[i + 1 :]
    return Parfactor(args, t, g.name)


def absorb_evidence(g: Parfactor, prv: PRV, observed: dict[tuple[str, ...], str]) -> list[Parfactor]:
    """Condition ``g`` on observations of ground instances of ``prv``.

    Returns the split parfactors: pieces whose instances are all observed
    have the argument fixed and dropped, the rest are untouched.
    """
    for value in observed.values():
        if value not in prv.range:
            raise ModelError(f"value {value!r} outside range of {prv.name}")
    if not observed:
        return [g]
    return _absorb(g, prv, observed)


def _absorb(g: Parfactor, prv: PRV, observed) -> list[Parfactor]:
    for i, a in enumerate(g.args):
        if a.prv != prv:
            continue
        if isinstance(a, CRV):
            raise LiftingError(f"cannot enter evidence into counting randvar {a}")
        inst = a.ground_instances()
        hit = [t for t in inst if t in observed]
        if not hit:
            continue
        values = {observed[t] for t in hit}
        if len(hit) == len(inst) and len(values) == 1:
            return _absorb(_fix_argument(g, i, prv.range.index(values.pop())), prv, observed)
        for j, x in enumerate(a.lvs):
            if x.size == 1:
                continue
            profile: dict[str, frozenset] = {}
            for c in x.domain:
                profile[c] = frozenset((t[:j] + t[j + 1 :], observed[t]) for t in hit if t[j] == c)
            groups: dict[frozenset, list[str]] = {}
            for c in x.domain:
                groups.setdefault(profile[c], []).append(c)
            if len(groups) > 1:
                pieces = split_logvar(g, x, list(groups.values()))
                return [p for piece in pieces for p in _absorb(piece, prv, observed)]
        raise LiftingError(f"observations of {prv.name} not expressible as a constraint split")
    return [g]


def _fix_argument(g: Parfactor, i: int, value: int) -> Parfactor:
    rest = g.args[:i] + g.args[i + 1 :]
    t = np.take(g.log_table, value, axis=i)
    remaining = frozenset().union(*(a.free for a in rest)) if rest else frozenset()
    r = _size(g.logvars - remaining)
    if r != 1:
        t = t * r
    return Parfactor(rest, np.asarray(t, dtype=float), g.name)


# -- shattering ------------------------------------------------------------


def _all_logvars(a: Arg) -> tuple[Logvar, ...]:
    return a.atom.lvs if isinstance(a, CRV) else a.lvs


def _partition(domains: Iterable[tuple[str, ...]]) -> list[tuple[str, ...]]:
    domains = list(dict.fromkeys(domains))
    order: list[str] = []
    for d in domains:
        for c in d:
            if c not in order:
                order.append(c)
    sets = [set(d) for d in domains]
    groups: dict[tuple[bool, ...], list[str]] = {}
    for c in order:
        groups.setdefault(tuple(c in s for s in sets), []).append(c)
    return [tuple(v) for v in groups.values()]


def shatter(parfactors: Sequence[Parfactor], extra: dict[str, list[tuple[str, ...]]] | None = None) -> list[Parfactor]:
    """Split parfactors until any two logvars with the same name have equal
    or disjoint domains, so that atoms of one PRV are equal or disjoint."""
    domains: dict[str, list[tuple[str, ...]]] = {}
    for g in parfactors:
        for a in g.args:
            for x in _all_logvars(a):
                domains.setdefault(x.name, []).append(x.domain)
    for name, ds in (extra or {}).items():
        if name in domains:
            domains[name].extend(ds)
    blocks: dict[str, dict[frozenset, tuple[str, ...]]] = {}
    for name, ds in domains.items():
        if len(set(ds)) > 1:
            blocks[name] = {frozenset(b): b for b in _partition(ds)}
    if not blocks:
        return list(parfactors)
    out: list[Parfactor] = []
    for g in parfactors:
        out.extend(_refine(g, blocks))
    return out


def _sub_blocks(x: Logvar, blocks) -> list[tuple[str, ...]] | None:
    table = blocks.get(x.name)
    if table is None or frozenset(x.domain) in table:
        return None
    dom = set(x.domain)
    return [b for key, b in table.items() if key <= dom]


def _refine(g: Parfactor, blocks) -> list[Parfactor]:
    for a in g.args:
        for j, x in enumerate(_all_logvars(a)):
            if isinstance(a, CRV) and j == a.pos:
                continue
            sub = _sub_blocks(x, blocks)
            if sub:
                return [p for piece in split_logvar(g, x, sub) for p in _refine(piece, blocks)]
    for i, a in enumerate(g.args):
        if isinstance(a, CRV):
            sub = _sub_blocks(a.counted, blocks)
            if sub:
                return _refine(split_crv(g, i, sub), blocks)
    return [g]


# -- elimination -----------------------------------------------------------


def _covers(outer: Atom, inner: Atom) -> bool:
    return outer.prv == inner.prv and all(
        set(b.domain) <= set(a.domain) for a, b in zip(outer.lvs, inner.lvs)
    )


def _keys(parfactors: Sequence[Parfactor]) -> list[Atom]:
    seen: dict[Atom, None] = {}
    for g in parfactors:
        for a in g.args:
            seen.setdefault(a.key, None)
    return list(seen)


def _later_clashes(others: Sequence[Parfactor], atom: Atom, x: Logvar) -> int:
    """Parfactors that would have to ground ``x`` to meet a CRV of ``atom``."""
    return sum(
        1
        for g in others
        if any(isinstance(a, Atom) and a.key == atom.key for a in g.args) and not count_convertible(g, x)
    )


def plan_cost(parfactors: Sequence[Parfactor], key: Atom) -> tuple[int, int, float]:
    """Symbolic estimate for eliminating ``key``: (groundings now, groundings
    a count-conversion forces later, table size)."""
    holding = [g for g in parfactors if key in g.keys()]
    others = [g for g in parfactors if key not in g.keys()]
    grounds = later = 0
    forms = [a for g in holding for a in g.args if a.key == key]
    crv_pos = next((a.pos for a in forms if isinstance(a, CRV)), None)
    args: dict = {}
    for g in holding:
        for a in g.args:
            if a.key == key and crv_pos is not None and not (isinstance(a, CRV) and a.pos == crv_pos):
                if isinstance(a, Atom) and count_convertible(g, a.lvs[crv_pos]):
                    a = CRV(a, crv_pos)
                else:
                    grounds += 1
            args.setdefault(a, [set(a.free), a.size, isinstance(a, CRV)])
    target = next(a for a in args if a.key == key)
    excess = set().union(*(v[0] for v in args.values())) - set(target.free)
    for x in sorted(excess, key=lambda x: (-x.size, x.name, x.domain)):
        holders = [a for a, v in args.items() if x in v[0]]
        if len(holders) == 1 and not args[holders[0]][2]:
            later += _later_clashes(others, holders[0], x)
            v = args[holders[0]]
            v[0].discard(x)
            v[1] = len(histograms(x.size, len(holders[0].prv.range)))
            v[2] = True
        else:
            grounds += 1
            for v in args.values():
                v[0].discard(x)
    return grounds, later, float(math.prod(v[1] for v in args.values()))


def _eliminate_once(parfactors: list[Parfactor], key: Atom, counter: GroundingCounter) -> tuple[list[Parfactor], bool]:
    holding = [g for g in parfactors if key in g.keys()]
    rest = [g for g in parfactors if key not in g.keys()]
    # Every atom shared by the product must take one form before multiplying.
    crv_pos: dict[Atom, int] = {}
    for h in holding:
        for a in h.args:
            if isinstance(a, CRV):
                crv_pos.setdefault(a.key, a.pos)
    aligned = []
    for original in holding:
        g = original
        for a in original.args:
            pos = crv_pos.get(a.key)
            if pos is None or (isinstance(a, CRV) and a.pos == pos):
                continue
            if isinstance(a, Atom) and count_convertible(g, a.lvs[pos]):
                g = count_convert(g, a.lvs[pos])
                continue
            # The counted logvar cannot be matched: ground it everywhere.
            if isinstance(a, Atom):
                pieces = ground_logvar(g, a.lvs[pos], counter)
            else:
                counter.record(g.name, a.counted.name)
                pieces = [split_crv(g, g.args.index(a), [(c,) for c in a.counted.domain])]
            others = [h for h in holding if h is not original]
            return shatter(rest + others + pieces), True
        aligned.append(g)
    g = multiply_all(aligned)
    grounded = False
    while True:
        target = next(a for a in g.args if a.key == key)
        excess = g.logvars - target.free
        if not excess:
            break
        order = sorted(excess, key=lambda x: (-x.size, x.name, x.domain))
        conv = [x for x in order if count_convertible(g, x)]
        if conv:
            g = count_convert(g, conv[0])
            continue
        x = min(excess, key=lambda x: (x.size, x.name, x.domain))
        g = multiply_all(ground_logvar(g, x, counter))
        grounded = True
    result = lift_sum_out(g, target)
    out = rest + ([result] if result.args else [])
    if grounded:
        out = shatter(out)
    return out, False


def eliminate(parfactors: Sequence[Parfactor], key: Atom, counter: GroundingCounter) -> list[Parfactor]:
    """Eliminate every ground instance covered by ``key``."""
    fs = list(parfactors)
    while True:
        pending = [k for k in _keys(fs) if _covers(key, k)]
        if not pending:
            return fs
        fs, _ = _eliminate_once(fs, pending[0], counter)


def eliminate_all(
    parfactors: Sequence[Parfactor],
    keep: Callable[[Atom], bool],
    counter: GroundingCounter,
    extra_blocks: dict[str, list[tuple[str, ...]]] | None = None,
) -> list[Parfactor]:
    """Greedily eliminate all atoms not kept, cheapest lifted step first."""
    fs = shatter(parfactors, extra_blocks)
    while True:
        cands = [k for k in _keys(fs) if not keep(k)]
        if not cands:
            break
        best = min(range(len(cands)), key=lambda n: (plan_cost(fs, cands[n]), n))
        fs, _ = _eliminate_once(fs, cands[best], counter)
    return [_normalised(g) for g in fs if g.args]


def marginal(parfactors: Sequence[Parfactor], prv: PRV, constants: Sequence[str], counter: GroundingCounter) -> np.ndarray:
    """Normalised distribution of one ground instance of ``prv``."""
    extra = {name: [(c,)] for name, c in zip(prv.params, constants)}
    fs = eliminate_all(
        parfactors,
        lambda k: k.prv == prv and tuple(x.domain[0] if x.size == 1 else None for x in k.lvs) == tuple(constants),
        counter,
        extra,
    )
    logp = np.zeros(len(prv.range))
    for g in fs:
        logp = logp + g.log_table  # only the query atom is left in each
    if not np.isfinite(logp).any():
        raise ModelError(f"evidence has zero probability for {prv.name}{tuple(constants)}")
    p = np.exp(logp - logp.max())
    return p / p.sum()
