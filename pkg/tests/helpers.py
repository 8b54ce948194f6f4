"""Shared test utilities: ground semantics of parfactor sets and random models."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from liftedjt import fojt, lve
from liftedjt.model import (
    BOOL,
    CRV,
    CURR,
    PDM,
    PREV,
    PRV,
    Atom,
    Evidence,
    Logvar,
    Parfactor,
    QueryTemplate,
    ground_factors,
    gr,
    load_model,
)

MODELS = Path(__file__).resolve().parent.parent / "models"


def gex(**domains) -> PDM:
    pdm = load_model(MODELS / "gex.lmf")
    return pdm.with_domains(domains) if domains else pdm


def log_joint(parfactors, variables=None):
    """Unnormalised log joint over all ground randvars of ``parfactors``."""
    factors = [f for g in parfactors for f in ground_factors(g)]
    if variables is None:
        variables = []
        for vs, _ in factors:
            for v in vs:
                if v not in variables:
                    variables.append(v)
    sizes = {}
    for vs, t in factors:
        for v, n in zip(vs, t.shape):
            sizes[v] = n
    for v in variables:
        sizes.setdefault(v, 2)
    shape = tuple(sizes[v] for v in variables)
    total = np.zeros(shape)
    for vs, t in factors:
        axes = [variables.index(v) for v in vs]
        order = np.argsort(axes)
        t = np.transpose(t, order)
        full = [1] * len(variables)
        for ax, n in zip(sorted(axes), t.shape):
            full[ax] = n
        total = total + t.reshape(full)
    return list(variables), total


def same_function(a, b, atol=1e-12) -> float:
    """Max deviation between two (variables, table) pairs after aligning axes."""
    va, ta = a
    vb, tb = b
    assert set(va) == set(vb), (va, vb)
    tb = np.transpose(tb, [vb.index(v) for v in va])
    dev = float(np.max(np.abs(ta - tb))) if ta.size else 0.0
    assert dev <= atol, dev
    return dev


def assert_jtree(tree, model=None):
    problems = fojt.violations(tree, model)
    assert not problems, problems


# -- random generators -------------------------------------------------------


def random_logvars(rng, max_domain=3, names=("X", "Y")):
    return {n: Logvar(n, tuple(f"{n.lower()}{i + 1}" for i in range(int(rng.integers(1, max_domain + 1))))) for n in names}


def random_parfactor(rng, logvars, prvs, k=None, name="g"):
    k = k or int(rng.integers(1, min(3, len(prvs)) + 1))
    chosen = [prvs[i] for i in rng.choice(len(prvs), size=k, replace=False)]
    args = tuple(Atom(p, tuple(logvars[x] for x in p.params)) for p in chosen)
    shape = tuple(a.size for a in args)
    return Parfactor(args, np.log(0.1 + rng.random(shape)), name)


def random_prvs(rng, logvars, n=3):
    names = list(logvars)
    out = []
    for i in range(n):
        arity = int(rng.choice([0, 1, 1, 2])) if len(names) > 1 else int(rng.integers(0, 2))
        params = tuple(sorted(rng.choice(names, size=min(arity, len(names)), replace=False).tolist()))
        rng_size = 3 if rng.random() < 0.15 else 2
        out.append(PRV(f"R{i}", params, BOOL if rng_size == 2 else ("a", "b", "c")))
    return out


def random_pdm(seed: int, max_domain=3, max_intra=3, evidence=True) -> PDM:
    """A small dynamic model with at least one inter-slice parfactor."""
    rng = np.random.default_rng(seed)
    logvars = random_logvars(rng, max_domain)
    prvs = random_prvs(rng, logvars, int(rng.integers(2, 4)))
    intra = [random_parfactor(rng, logvars, prvs, name=f"g{i}") for i in range(int(rng.integers(1, max_intra + 1)))]
    inter = []
    for i in range(int(rng.integers(1, 3))):
        a, b = prvs[int(rng.integers(len(prvs)))], prvs[int(rng.integers(len(prvs)))]
        args = [Atom(a.at(PREV), tuple(logvars[x] for x in a.params)), Atom(b.at(CURR), tuple(logvars[x] for x in b.params))]
        if rng.random() < 0.3:
            c = prvs[int(rng.integers(len(prvs)))]
            atom = Atom(c.at(CURR), tuple(logvars[x] for x in c.params))
            if atom.prv not in {x.prv for x in args}:
                args.append(atom)
        shape = tuple(x.size for x in args)
        inter.append(Parfactor(tuple(args), np.log(0.1 + rng.random(shape)), f"h{i}"))
    covered = {a.prv.name for g in intra for a in g.args}
    for p in prvs:
        if p.name not in covered and any(a.prv.name == p.name for g in inter for a in g.args):
            atom = Atom(p, tuple(logvars[x] for x in p.params))
            intra.append(Parfactor((atom,), np.log(0.1 + rng.random(atom.size)), f"g{len(intra)}"))
    used = {a.prv.name for g in intra + inter for a in g.args}
    prv_map = {p.name: p for p in prvs if p.name in used}
    queries = []
    for p in prv_map.values():
        consts = tuple(logvars[x].domain[0] for x in p.params)
        queries.append(QueryTemplate(p, consts, 0))
    steps = {}
    if evidence:
        for t in range(5):
            if rng.random() < 0.4:
                p = list(prv_map.values())[int(rng.integers(len(prv_map)))]
                consts = tuple(logvars[x].domain[int(rng.integers(logvars[x].size))] for x in p.params)
                steps[t] = ((p, consts, p.range[int(rng.integers(len(p.range)))]),)
    return PDM(logvars, prv_map, tuple(intra), tuple(inter), tuple(queries), Evidence(steps))


# -- parfactors for operator checks ---------------------------------------------


def lve_logvars(rng):
    return {n: Logvar(n, tuple(f"{n.lower()}{i + 1}" for i in range(int(rng.integers(1, 4))))) for n in "XY"}


PRVS = [
    PRV("A", ("X",)),
    PRV("B", ("X", "Y")),
    PRV("C"),
    PRV("D", ("Y",), ("r", "g", "b")),
    PRV("E", ("X",), ("u", "v", "w")),
]


def make_parfactor(rng, logvars=None, k=None, name="g"):
    logvars = logvars or lve_logvars(rng)
    k = k or int(rng.integers(1, 4))
    chosen = [PRVS[i] for i in rng.choice(len(PRVS), size=k, replace=False)]
    args = tuple(Atom(p, tuple(logvars[x] for x in p.params)) for p in chosen)
    table = np.log(0.05 + rng.random(tuple(a.size for a in args)))
    return Parfactor(args, table, name)


def with_crv(rng, g):
    """Count-convert a random convertible logvar, if any."""
    options = [x for x in sorted(g.logvars, key=lambda x: x.name) if lve.count_convertible(g, x)]
    if options and rng.random() < 0.7:
        return lve.count_convert(g, options[int(rng.integers(len(options)))])
    return g


def ground_vars(args):
    out = []
    for a in args:
        atom = a.atom if isinstance(a, CRV) else a
        for v in gr(atom):
            if v not in out:
                out.append(v)
    return out
