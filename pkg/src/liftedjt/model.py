"""Parameterised models: logvars, PRVs, CRVs, parfactors, PMs and PDMs.

Potentials are stored as log-space numpy tables (``-inf`` encodes a zero
potential).  Constraints are kept in product form: every logvar object
carries its own admissible domain, so restricting a logvar yields a new
``Logvar`` with the same name and a smaller domain.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

BOOL = ("false", "true")

# Symbolic slice tags used inside a two-slice model.  Unrolled models use
# integer step indices instead.
PREV = "t-1"
CURR = "t"


class ModelError(ValueError):
    """Raised for structurally invalid models or model-level requests."""


class ParseError(ModelError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}" if line else message)


@dataclass(frozen=True)
class Logvar:
    name: str
    domain: tuple[str, ...]

    def __post_init__(self):
        if not self.domain:
            raise ModelError(f"logvar {self.name} has an empty domain")
        if len(set(self.domain)) != len(self.domain):
            raise ModelError(f"logvar {self.name} has duplicate constants")

    @property
    def size(self) -> int:
        return len(self.domain)

    def restrict(self, values: Iterable[str]) -> "Logvar":
        keep = set(values)
        unknown = keep - set(self.domain)
        if unknown:
            raise ModelError(f"constants {sorted(unknown)} not in domain of {self.name}")
        return Logvar(self.name, tuple(c for c in self.domain if c in keep))

    def __str__(self):
        return self.name

    def describe(self) -> str:
        return f"{self.name}∈{{{','.join(self.domain)}}}"


@dataclass(frozen=True)
class PRV:
    name: str
    params: tuple[str, ...] = ()
    range: tuple[str, ...] = BOOL
    slice: str | int | None = None

    def __post_init__(self):
        if len(self.range) < 2:
            raise ModelError(f"PRV {self.name} needs at least two range values")
        if len(set(self.params)) != len(self.params):
            raise ModelError(f"PRV {self.name} repeats a logvar")

    def at(self, tag: str | int | None) -> "PRV":
        return PRV(self.name, self.params, self.range, tag)

    @property
    def label(self) -> str:
        return self.name if self.slice is None else f"{self.name}@{self.slice}"

    def __str__(self):
        if not self.params:
            return self.label
        return f"{self.label}({','.join(self.params)})"


@dataclass(frozen=True)
class Atom:
    """An occurrence of a PRV with concrete (possibly restricted) logvars."""

    prv: PRV
    lvs: tuple[Logvar, ...]

    def __post_init__(self):
        if tuple(lv.name for lv in self.lvs) != self.prv.params:
            raise ModelError(f"logvars of {self.prv} do not match its parameters")

    @property
    def key(self) -> "Atom":
        return self

    @property
    def counted(self) -> None:
        return None

    @property
    def free(self) -> frozenset[Logvar]:
        return frozenset(lv for lv in self.lvs if lv.size > 1)

    @property
    def size(self) -> int:
        return len(self.prv.range)

    @property
    def is_ground(self) -> bool:
        return all(lv.size == 1 for lv in self.lvs)

    def ground_instances(self) -> list[tuple[str, ...]]:
        return list(itertools.product(*(lv.domain for lv in self.lvs)))

    def substitute(self, old: Logvar, new: Logvar) -> "Atom":
        return Atom(self.prv, tuple(new if lv == old else lv for lv in self.lvs))

    def retag(self, tag) -> "Atom":
        return Atom(self.prv.at(tag), self.lvs)

    def __str__(self):
        if not self.lvs:
            return self.prv.label
        parts = [lv.domain[0] if lv.size == 1 else lv.name for lv in self.lvs]
        return f"{self.prv.label}({','.join(parts)})"


@lru_cache(maxsize=None)
def histograms(n: int, k: int) -> tuple[tuple[int, ...], ...]:
    """All count vectors of length k summing to n; first count descending."""
    if k == 1:
        return ((n,),)
    out = []
    for first in range(n, -1, -1):
        for rest in histograms(n - first, k - 1):
            out.append((first,) + rest)
    return tuple(out)


@lru_cache(maxsize=None)
def histogram_matrix(n: int, k: int) -> np.ndarray:
    m = np.array(histograms(n, k), dtype=float)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def log_multinomial(n: int, k: int) -> np.ndarray:
    h = np.array(histograms(n, k))
    out = math.lgamma(n + 1) - np.array([sum(math.lgamma(c + 1) for c in row) for row in h])
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CRV:
    """Counting randvar #_{X}[P(...)] counting position ``pos`` of ``atom``."""

    atom: Atom
    pos: int

    @property
    def key(self) -> Atom:
        return self.atom

    @property
    def prv(self) -> PRV:
        return self.atom.prv

    @property
    def counted(self) -> Logvar:
        return self.atom.lvs[self.pos]

    @property
    def free(self) -> frozenset[Logvar]:
        return frozenset(lv for i, lv in enumerate(self.atom.lvs) if i != self.pos and lv.size > 1)

    @property
    def size(self) -> int:
        return len(histograms(self.counted.size, len(self.prv.range)))

    @property
    def histograms(self) -> tuple[tuple[int, ...], ...]:
        return histograms(self.counted.size, len(self.prv.range))

    def substitute(self, old: Logvar, new: Logvar) -> "CRV":
        """Replace free occurrences of ``old``; the counted position is bound."""
        lvs = tuple(new if (lvar == old and i != self.pos) else lvar for i, lvar in enumerate(self.atom.lvs))
        return CRV(Atom(self.atom.prv, lvs), self.pos)

    def retag(self, tag) -> "CRV":
        return CRV(self.atom.retag(tag), self.pos)

    def __str__(self):
        return f"#{self.counted.name}[{self.atom}]"


Arg = Atom | CRV


@dataclass(frozen=True)
class Constraint:
    """Admissible tuples over ``logvars``; ``tuples is None`` means TOP.

    TOP is relative to the domains carried by the logvar objects.
    """

    logvars: tuple[Logvar, ...] = ()
    tuples: frozenset[tuple[str, ...]] | None = None

    def __post_init__(self):
        if self.tuples is None:
            return
        for t in self.tuples:
            if len(t) != len(self.logvars):
                raise ModelError("constraint tuple arity differs from its logvars")
            for c, lv in zip(t, self.logvars):
                if c not in lv.domain:
                    raise ModelError(f"constant {c} outside domain of {lv.name}")

    @property
    def is_top(self) -> bool:
        return self.tuples is None

    def names(self) -> tuple[str, ...]:
        return tuple(lv.name for lv in self.logvars)

    def admissible(self) -> list[dict[str, str]]:
        if self.tuples is None:
            rows = itertools.product(*(lv.domain for lv in self.logvars))
        else:
            rows = sorted(self.tuples)
        return [dict(zip(self.names(), row)) for row in rows]


TOP = Constraint()


@dataclass(frozen=True, eq=False)
class Parfactor:
    args: tuple[Arg, ...]
    log_table: np.ndarray
    name: str = ""

    def __post_init__(self):
        shape = tuple(a.size for a in self.args)
        if self.log_table.shape != shape:
            raise ModelError(
                f"parfactor {self.name}: table shape {self.log_table.shape} != {shape} "
                "(incomplete specification)"
            )
        if np.isnan(self.log_table).any():
            raise ModelError(f"parfactor {self.name}: NaN potential")
        self.log_table.setflags(write=False)

    @classmethod
    def from_potentials(cls, args: Sequence[Arg], potentials, name: str = "") -> "Parfactor":
        p = np.asarray(potentials, dtype=float).reshape(tuple(a.size for a in args))
        if (p < 0).any():
            raise ModelError(f"parfactor {name}: negative potential")
        with np.errstate(divide="ignore"):
            return cls(tuple(args), np.log(p), name)

    @property
    def potential(self) -> np.ndarray:
        return np.exp(self.log_table)

    @property
    def logvars(self) -> frozenset[Logvar]:
        return frozenset().union(*(a.free for a in self.args)) if self.args else frozenset()

    @property
    def constraint(self) -> Constraint:
        lvs = sorted(
            {lv for a in self.args for lv in (a.atom.lvs if isinstance(a, CRV) else a.lvs)},
            key=lambda lv: (lv.name, lv.domain),
        )
        return Constraint(tuple(lvs))

    @property
    def prvs(self) -> set[PRV]:
        return {a.prv for a in self.args}

    def keys(self) -> list[Atom]:
        return [a.key for a in self.args]

    def retag(self, mapping: dict) -> "Parfactor":
        args = tuple(a.retag(mapping.get(a.prv.slice, a.prv.slice)) for a in self.args)
        return Parfactor(args, self.log_table, self.name)

    def __str__(self):
        return f"{self.name or 'φ'}({', '.join(map(str, self.args))})"

    def __repr__(self):
        return f"Parfactor<{self}>"


def atom_of(prv: PRV, logvars: dict[str, Logvar]) -> Atom:
    return Atom(prv, tuple(logvars[p] for p in prv.params))


# -- grounding semantics ---------------------------------------------------

GroundVar = tuple  # (prv name, slice, constants)


def ground_var(prv: PRV, consts: Sequence[str]) -> GroundVar:
    return (prv.name, prv.slice, tuple(consts))


def _constraint_rows(names: Sequence[str], lvs: dict[str, Logvar], constraint: Constraint):
    if constraint.is_top:
        return [dict(zip(names, row)) for row in itertools.product(*(lvs[n].domain for n in names))]
    missing = set(names) - set(constraint.names())
    if missing:
        raise ModelError(f"logvars {sorted(missing)} absent from the constraint")
    seen, rows = set(), []
    for row in constraint.admissible():
        sub = tuple(row[n] for n in names)
        if sub not in seen:
            seen.add(sub)
            rows.append(dict(zip(names, sub)))
    return rows


def gr(item, constraint: Constraint = TOP) -> list:
    """Ground instances of an atom (list of ground vars) or a parfactor
    (list of ``(ground vars, log table)`` factors)."""
    if isinstance(item, Atom):
        lvs = {lv.name: lv for lv in item.lvs}
        rows = _constraint_rows(item.prv.params, lvs, constraint)
        return [ground_var(item.prv, [r[p] for p in item.prv.params]) for r in rows]
    if isinstance(item, Parfactor):
        return ground_factors(item, constraint)
    raise TypeError(f"cannot ground {type(item).__name__}")


def ground_factors(g: Parfactor, constraint: Constraint = TOP) -> list[tuple[tuple, np.ndarray]]:
    """Expand a parfactor into ground factors, unfolding CRVs to their
    underlying randvars.  Meant for small inputs (tests and oracles)."""
    free: list[Logvar] = []
    for a in g.args:
        lvs = a.atom.lvs if isinstance(a, CRV) else a.lvs
        for i, lvar in enumerate(lvs):
            if isinstance(a, CRV) and i == a.pos:
                continue
            if lvar not in free:
                free.append(lvar)
    if constraint.is_top:
        rows = [dict(zip(free, r)) for r in itertools.product(*(x.domain for x in free))]
    else:
        if len({x.name for x in free}) != len(free):
            raise ModelError("explicit constraints need distinct logvar names")
        by_name = {x.name: x for x in free}
        rows = [
            {by_name[n]: r[n] for n in by_name}
            for r in _constraint_rows(sorted(by_name), by_name, constraint)
        ]
    out = []
    for row in rows:
        variables: list[GroundVar] = []
        slots = []
        for a in g.args:
            if isinstance(a, CRV):
                vs = []
                for c in a.counted.domain:
                    consts = [c if i == a.pos else row[x] for i, x in enumerate(a.atom.lvs)]
                    vs.append(ground_var(a.prv, consts))
                slots.append(("crv", a, vs))
            else:
                vs = [ground_var(a.prv, [row[x] for x in a.lvs])]
                slots.append(("prv", a, vs))
            for v in vs:
                if v not in variables:
                    variables.append(v)
        ranges = {v: len(a.prv.range) for _, a, vs in slots for v in vs}
        shape = tuple(ranges[v] for v in variables)
        table = np.empty(shape)
        hist_index = {}
        for assignment in itertools.product(*(range(s) for s in shape)):
            val = dict(zip(variables, assignment))
            idx = []
            for kind, a, vs in slots:
                if kind == "prv":
                    idx.append(val[vs[0]])
                    continue
                counts = [0] * len(a.prv.range)
                for v in vs:
                    counts[val[v]] += 1
                hk = (a.counted.size, len(a.prv.range))
                if hk not in hist_index:
                    hist_index[hk] = {h: i for i, h in enumerate(histograms(*hk))}
                idx.append(hist_index[hk][tuple(counts)])
            table[assignment] = g.log_table[tuple(idx)]
        out.append((tuple(variables), table))
    return out


# -- models ----------------------------------------------------------------


@dataclass(frozen=True)
class PM:
    parfactors: tuple[Parfactor, ...]

    def __post_init__(self):
        if not self.parfactors:
            raise ModelError("model has no parfactors")

    @property
    def prvs(self) -> list[PRV]:
        seen: list[PRV] = []
        for g in self.parfactors:
            for a in g.args:
                if a.prv not in seen:
                    seen.append(a.prv)
        return seen

    def ground(self) -> list[tuple[tuple, np.ndarray]]:
        return [f for g in self.parfactors for f in gr(g)]


@dataclass(frozen=True)
class Query:
    prv: PRV
    constants: tuple[str, ...]
    target_time: int = 0
    evidence_horizon: int = 0

    def __post_init__(self):
        if self.target_time < 0 or self.target_time < self.evidence_horizon:
            raise ModelError("query target time must be >= evidence horizon >= 0")

    @property
    def term(self) -> str:
        if not self.constants:
            return self.prv.name
        return f"{self.prv.name}({','.join(self.constants)})"


@dataclass(frozen=True)
class QueryTemplate:
    """A query term issued at every step, looking ``lookahead`` steps ahead."""

    prv: PRV
    constants: tuple[str, ...]
    lookahead: int = 0

    @property
    def term(self) -> str:
        if not self.constants:
            return self.prv.name
        return f"{self.prv.name}({','.join(self.constants)})"

    def at(self, t: int) -> Query:
        return Query(self.prv, self.constants, t + self.lookahead, t)


Observation = tuple[PRV, tuple[str, ...], str]


@dataclass(frozen=True)
class Evidence:
    steps: dict = field(default_factory=dict)  # t -> tuple of Observation

    def __post_init__(self):
        for t, obs in self.steps.items():
            seen: dict = {}
            for prv, consts, value in obs:
                if value not in prv.range:
                    raise ModelError(f"value {value} outside range of {prv.name}")
                key = (prv.name, consts)
                if seen.get(key, value) != value:
                    raise ModelError(f"conflicting evidence for {prv.name}{consts} at t={t}")
                seen[key] = value

    def at(self, t: int) -> tuple[Observation, ...]:
        return tuple(self.steps.get(t, ()))


@dataclass(frozen=True)
class PDM:
    """Two-slice dynamic model.

    ``intra`` holds slice templates (PRVs untagged); they form G0 and are
    instantiated at both slices of the two-slice model.  ``inter`` holds
    parfactors whose PRVs are tagged ``PREV``/``CURR``.
    """

    logvars: dict[str, Logvar]
    prvs: dict[str, PRV]
    intra: tuple[Parfactor, ...]
    inter: tuple[Parfactor, ...] = ()
    queries: tuple[QueryTemplate, ...] = ()
    evidence: Evidence = field(default_factory=Evidence)

    def __post_init__(self):
        if not self.intra and not self.inter:
            raise ModelError("model has no parfactors")
        in_slice = {a.prv.name for g in self.intra for a in g.args}
        for g in self.inter:
            for a in g.args:
                if a.prv.name not in in_slice:
                    raise ModelError(f"{a.prv.name} occurs in slice parfactor {g.name} but in no slice model parfactor")

    @property
    def g0(self) -> PM:
        return PM(tuple(g.retag({None: CURR}) for g in self.intra))

    @property
    def g_arrow(self) -> PM:
        prev = tuple(g.retag({None: PREV}) for g in self.intra)
        curr = tuple(g.retag({None: CURR}) for g in self.intra)
        return PM(prev + self.inter + curr)

    def with_domains(self, sizes: dict[str, int]) -> "PDM":
        """Copy of the model with logvar domains resized to ``sizes``."""
        new = dict(self.logvars)
        for name, n in sizes.items():
            if name not in new:
                raise ModelError(f"unknown logvar {name}")
            old = new[name].domain
            prefix = re.sub(r"\d+$", "", old[0]) or name.lower()
            new[name] = Logvar(name, tuple(f"{prefix}{i + 1}" for i in range(n)))
        return _relink(self, new)

    def with_potentials(self, seed: int) -> "PDM":
        """Copy with every potential redrawn uniformly from (0, 1]."""
        rng = np.random.default_rng(seed)

        def redraw(g: Parfactor) -> Parfactor:
            p = 1.0 - rng.random(g.log_table.shape)
            return Parfactor(g.args, np.log(p), g.name)

        return PDM(
            self.logvars,
            self.prvs,
            tuple(redraw(g) for g in self.intra),
            tuple(redraw(g) for g in self.inter),
            self.queries,
            self.evidence,
        )


def _relink(pdm: PDM, logvars: dict[str, Logvar]) -> PDM:
    def fix(g: Parfactor) -> Parfactor:
        return Parfactor(tuple(atom_of(a.prv, logvars) for a in g.args), g.log_table, g.name)

    for q in pdm.queries:
        for name, c in zip(q.prv.params, q.constants):
            if c not in logvars[name].domain:
                raise ModelError(f"query constant {c} outside resized domain of {name}")
    return PDM(
        logvars,
        pdm.prvs,
        tuple(fix(g) for g in pdm.intra),
        tuple(fix(g) for g in pdm.inter),
        pdm.queries,
        pdm.evidence,
    )


def lv(item) -> set[Logvar]:
    """Logvars occurring in an atom, CRV, parfactor or collection thereof.

    Counted logvars are bound and excluded; so are single-constant logvars,
    which behave as constants.
    """
    if isinstance(item, (Atom, CRV)):
        return set(item.free)
    if isinstance(item, Parfactor):
        return set(item.logvars)
    out: set[Logvar] = set()
    for x in item:
        out |= lv(x)
    return out


# -- textual format --------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+) |
    (?P<nl>\n) |
    (?P<comment>\#[^\n]*) |
    (?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?) |
    (?P<name>[A-Za-z_][A-Za-z0-9_]*) |
    (?P<sym>[{}\[\]();,:=@|+\-])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks, line, col, pos = [], 1, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        s = m.group()
        if kind == "nl":
            toks.append(_Tok("nl", s, line, col))
            line, col = line + 1, 1
        else:
            if kind not in ("ws", "comment"):
                toks.append(_Tok(kind, s, line, col))
            col += len(s)
        pos = m.end()
    toks.append(_Tok("eof", "", line, col))
    return toks


class _Parser:
    def __init__(self, text: str, seed: int):
        self.toks = _tokenize(text)
        self.i = 0
        self.rng = np.random.default_rng(seed)
        self.logvars: dict[str, Logvar] = {}
        self.prvs: dict[str, PRV] = {}
        self.intra: list[Parfactor] = []
        self.inter: list[Parfactor] = []
        self.names: set[str] = set()
        self.queries: list[QueryTemplate] = []
        self.evidence: dict[int, list[Observation]] = {}

    # token helpers; newlines are insignificant inside brackets
    def peek(self, skip_nl=True) -> _Tok:
        j = self.i
        while skip_nl and self.toks[j].kind == "nl":
            j += 1
        return self.toks[j]

    def next(self, skip_nl=True) -> _Tok:
        while skip_nl and self.toks[self.i].kind == "nl":
            self.i += 1
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text=None, kind=None, skip_nl=True) -> _Tok:
        t = self.next(skip_nl)
        if (text is not None and t.text != text) or (kind is not None and t.kind != kind):
            want = text if text is not None else kind
            raise ParseError(f"expected {want!r}, found {t.text or t.kind!r}", t.line, t.col)
        return t

    def end_statement(self):
        t = self.next(skip_nl=False)
        if t.kind not in ("nl", "eof"):
            raise ParseError(f"unexpected {t.text!r} at end of statement", t.line, t.col)
        if t.kind == "eof":
            self.i -= 1

    def error(self, tok: _Tok, msg: str):
        raise ParseError(msg, tok.line, tok.col)

    def parse(self) -> PDM:
        while True:
            t = self.peek()
            if t.kind == "eof":
                break
            self.next()
            if t.kind != "name":
                self.error(t, f"unexpected {t.text!r}")
            handler = {
                "domain": self.p_domain,
                "prv": self.p_prv,
                "parfactor": lambda tok: self.p_parfactor(tok, inter=False),
                "slice": self.p_slice,
                "query": lambda tok: self.p_query(tok, 0),
                "predict": self.p_predict,
                "evidence": self.p_evidence,
            }.get(t.text)
            if handler is None:
                self.error(t, f"unknown key {t.text!r}")
            handler(t)
        if not self.intra and not self.inter:
            raise ParseError("model has no parfactors")
        ev = Evidence({t: tuple(obs) for t, obs in sorted(self.evidence.items())})
        return PDM(self.logvars, self.prvs, tuple(self.intra), tuple(self.inter), tuple(self.queries), ev)

    def ident_list(self, close: str) -> list[str]:
        items = []
        if self.peek().text == close:
            self.next()
            return items
        while True:
            t = self.next()
            if t.kind not in ("name", "num"):
                self.error(t, f"expected identifier, found {t.text!r}")
            items.append(t.text)
            sep = self.next()
            if sep.text == close:
                return items
            if sep.text != ",":
                self.error(sep, f"expected ',' or {close!r}")

    def p_domain(self, kw):
        name = self.expect(kind="name")
        if name.text in self.logvars:
            self.error(name, f"conflicting declaration of logvar {name.text}")
        self.expect("=")
        self.expect("{")
        consts = self.ident_list("}")
        try:
            self.logvars[name.text] = Logvar(name.text, tuple(consts))
        except ModelError as e:
            self.error(name, str(e))
        self.end_statement()

    def p_prv(self, kw):
        name = self.expect(kind="name")
        if name.text in self.prvs:
            self.error(name, f"conflicting declaration of PRV {name.text}")
        params: list[str] = []
        if self.peek(False).text == "(":
            self.next()
            params = self.ident_list(")")
        for p in params:
            if p not in self.logvars:
                self.error(name, f"unknown logvar {p}")
        rng = BOOL
        if self.peek(False).text == "range":
            self.next()
            self.expect("{")
            rng = tuple(self.ident_list("}"))
        try:
            self.prvs[name.text] = PRV(name.text, tuple(params), rng)
        except ModelError as e:
            self.error(name, str(e))
        self.end_statement()

    def p_slice(self, kw):
        self.expect("parfactor")
        self.p_parfactor(kw, inter=True)

    def arg(self, inter: bool) -> Atom:
        name = self.expect(kind="name")
        prv = self.prvs.get(name.text)
        if prv is None:
            self.error(name, f"unknown PRV {name.text}")
        params: list[str] = []
        if self.peek().text == "(":
            self.next()
            params = self.ident_list(")")
        if len(params) != len(prv.params):
            self.error(name, f"arity mismatch for {prv.name}: expected {len(prv.params)}, got {len(params)}")
        for p in params:
            if p not in self.logvars:
                self.error(name, f"unknown logvar {p}")
        if tuple(params) != prv.params:
            self.error(name, f"{prv.name} must be written with logvars ({','.join(prv.params)})")
        tag = None
        if self.peek().text == "@":
            at = self.next()
            if not inter:
                self.error(at, "slice tags are only allowed in slice parfactors")
            s = self.expect(kind="num")
            if s.text not in ("0", "1"):
                self.error(s, "slice tag must be @0 or @1")
            tag = PREV if s.text == "0" else CURR
        elif inter:
            self.error(name, f"{prv.name} needs a slice tag in a slice parfactor")
        return atom_of(prv.at(tag), self.logvars)

    def p_parfactor(self, kw, inter: bool):
        name = self.expect(kind="name")
        if name.text in self.names:
            self.error(name, f"conflicting declaration of parfactor {name.text}")
        self.names.add(name.text)
        self.expect("[")
        args: list[Atom] = []
        if self.peek().text != "]":
            while True:
                args.append(self.arg(inter))
                sep = self.next()
                if sep.text == "]":
                    break
                if sep.text != ",":
                    self.error(sep, "expected ',' or ']'")
        else:
            self.next()
        if not args:
            self.error(name, "parfactor without arguments")
        if len({a.prv for a in args}) != len(args):
            self.error(name, "PRV repeated in a parfactor")
        if inter and not ({a.prv.slice for a in args} >= {PREV, CURR}):
            self.error(name, "slice parfactor must mention both slices")
        self.expect("table")
        shape = tuple(a.size for a in args)
        if self.peek().text == "random":
            self.next()
            table = 1.0 - self.rng.random(shape)
        else:
            table = self.table(name, args, shape)
        g = Parfactor.from_potentials(args, table, name.text)
        (self.inter if inter else self.intra).append(g)
        self.end_statement()

    def table(self, name: _Tok, args: list[Atom], shape) -> np.ndarray:
        ranges = [a.prv.range for a in args]
        initials_ok = all(len({v[0] for v in r}) == len(r) for r in ranges)
        self.expect("{")
        values: dict[tuple[int, ...], float] = {}
        while True:
            t = self.next()
            if t.text == "}":
                break
            key_parts = [t]
            while self.peek().text not in (":",):
                key_parts.append(self.next())
            self.expect(":")
            idx = self.table_key(key_parts, ranges, initials_ok)
            num = self.next()
            if num.kind != "num":
                self.error(num, "potential must be a non-negative decimal number")
            if idx in values:
                self.error(key_parts[0], "duplicate table row")
            values[idx] = float(num.text)
            sep = self.next()
            if sep.text == "}":
                break
            if sep.text != ",":
                self.error(sep, "expected ',' or '}' in table")
        expected = int(np.prod(shape)) if shape else 1
        if len(values) != expected:
            self.error(name, f"incomplete specification: {len(values)} of {expected} rows")
        out = np.empty(shape)
        for idx, v in values.items():
            out[idx] = v
        return out

    def table_key(self, parts: list[_Tok], ranges, initials_ok) -> tuple[int, ...]:
        tok = parts[0]
        text = "".join(p.text for p in parts)
        if "|" in text:
            vals = text.split("|")
        elif initials_ok and len(text) == len(ranges):
            vals = list(text)
            ranges_init = [[v[0] for v in r] for r in ranges]
            try:
                return tuple(ri.index(c) for ri, c in zip(ranges_init, vals))
            except ValueError:
                self.error(tok, f"bad table key {text!r}")
        else:
            vals = [text]
        if len(vals) != len(ranges):
            self.error(tok, f"table key {text!r} has wrong arity")
        try:
            return tuple(r.index(v) for r, v in zip(ranges, vals))
        except ValueError:
            self.error(tok, f"bad table key {text!r}")

    def ground_term(self) -> tuple[PRV, tuple[str, ...], _Tok]:
        name = self.expect(kind="name")
        prv = self.prvs.get(name.text)
        if prv is None:
            self.error(name, f"unknown PRV {name.text}")
        consts: list[str] = []
        if self.peek(False).text == "(":
            self.next()
            consts = self.ident_list(")")
        if len(consts) != len(prv.params):
            self.error(name, f"arity mismatch for {prv.name}")
        for p, c in zip(prv.params, consts):
            if c not in self.logvars[p].domain:
                self.error(name, f"constant {c} not in domain of {p}")
        return prv, tuple(consts), name

    def p_query(self, kw, lookahead: int):
        while True:
            prv, consts, _ = self.ground_term()
            self.queries.append(QueryTemplate(prv, consts, lookahead))
            if self.peek(False).text == ";":
                self.next()
                continue
            break
        self.end_statement()

    def p_predict(self, kw):
        n = self.expect(kind="num")
        if not n.text.isdigit() or int(n.text) < 1:
            self.error(n, "prediction lookahead must be a positive integer")
        self.p_query(kw, int(n.text))

    def p_evidence(self, kw):
        self.expect("t")
        self.expect("=")
        step = self.expect(kind="num")
        if not step.text.isdigit():
            self.error(step, "time step must be a non-negative integer")
        self.expect("{")
        obs = self.evidence.setdefault(int(step.text), [])
        if self.peek().text != "}":
            while True:
                prv, consts, tok = self.ground_term()
                self.expect("=")
                v = self.next()
                if v.text not in prv.range:
                    self.error(v, f"value {v.text!r} outside range of {prv.name}")
                for p, c, val in obs:
                    if p == prv and c == consts and val != v.text:
                        self.error(tok, f"conflicting evidence for {prv.name}")
                obs.append((prv, consts, v.text))
                sep = self.next()
                if sep.text == "}":
                    break
                if sep.text != ",":
                    self.error(sep, "expected ',' or '}'")
        else:
            self.next()
        self.end_statement()


def parse_model(text: str, seed: int = 0) -> PDM:
    """Parse the textual model format.  ``table random`` draws potentials
    from (0, 1] with a generator seeded by ``seed``."""
    return _Parser(text, seed).parse()


def load_model(path, seed: int = 0) -> PDM:
    with open(path) as fh:
        return parse_model(fh.read(), seed)


def _fmt_num(x: float) -> str:
    return repr(float(x))


def _table_text(g: Parfactor) -> str:
    ranges = [a.prv.range for a in g.args]
    initials = all(len({v[0] for v in r}) == len(r) for r in ranges)
    rows = []
    p = g.potential
    for idx in itertools.product(*(range(len(r)) for r in ranges)):
        vals = [r[i] for r, i in zip(ranges, idx)]
        key = "".join(v[0] for v in vals) if initials else "|".join(vals)
        rows.append(f"{key}: {_fmt_num(p[idx])}")
    return "{ " + ", ".join(rows) + " }"


def _arg_text(a: Atom) -> str:
    s = a.prv.name
    if a.prv.params:
        s += f"({','.join(a.prv.params)})"
    if a.prv.slice is not None:
        s += "@0" if a.prv.slice == PREV else "@1"
    return s


def format_model(pdm: PDM) -> str:
    lines = []
    for lvar in pdm.logvars.values():
        lines.append(f"domain {lvar.name} = {{ {', '.join(lvar.domain)} }}")
    for prv in pdm.prvs.values():
        s = f"prv {prv.name}"
        if prv.params:
            s += f"({','.join(prv.params)})"
        if prv.range != BOOL:
            s += f" range {{ {', '.join(prv.range)} }}"
        lines.append(s)
    for g in pdm.intra:
        lines.append(f"parfactor {g.name} [ {', '.join(_arg_text(a) for a in g.args)} ] table {_table_text(g)}")
    for g in pdm.inter:
        lines.append(f"slice parfactor {g.name} [ {', '.join(_arg_text(a) for a in g.args)} ] table {_table_text(g)}")
    by_look: dict[int, list[str]] = {}
    for q in pdm.queries:
        by_look.setdefault(q.lookahead, []).append(q.term)
    for k, terms in sorted(by_look.items()):
        lines.append(("query " if k == 0 else f"predict {k} ") + " ; ".join(terms))
    for t, obs in sorted(pdm.evidence.steps.items()):
        items = []
        for prv, consts, v in obs:
            term = prv.name + (f"({','.join(consts)})" if consts else "")
            items.append(f"{term}={v}")
        lines.append(f"evidence t={t} {{ {', '.join(items)} }}")
    return "\n".join(lines) + "\n"
