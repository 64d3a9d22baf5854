"""Shared generators and validity checks for the test suite."""

from __future__ import annotations

import math
import random
from typing import Dict, List, Sequence

from gauss_plp import algebra as alg
from gauss_plp.algebra import GaussianFactor, LinearForm, PPDFTerm, SuccessFunction


def assert_valid(psi: SuccessFunction) -> None:
    """Every structural invariant a success function must satisfy."""
    keys = set()
    for t in psi.terms:
        c = t.term.coeff
        assert c > 0.0 and math.isfinite(c), c
        assert not t.constraints.unsat
        seen = set()
        for d in t.term.deltas:
            assert d.var not in seen, "two deltas on one variable"
            seen.add(d.var)
        for g in t.term.gaussians:
            assert g.variance > 0.0 and math.isfinite(g.variance)
            assert g.arg.const == 0.0
            assert g.arg.coeffs and g.arg.coeffs[0][1] == 1.0
            assert all(a != 0.0 for _, a in g.arg.coeffs)
        pivots = [r.coeffs[0][0] for r in t.constraints.rows]
        for r in t.constraints.rows:
            assert r.coeffs[0][1] == 1.0
            others = [v for v, _ in r.coeffs[1:]]
            assert not set(others) & set(pivots)
        assert len(set(pivots)) == len(pivots)
        key = t.structure_key()
        assert key not in keys, "unmerged duplicate term"
        keys.add(key)


def random_gaussian(rng: random.Random, var: str, others: Sequence[str]) -> GaussianFactor:
    """Factor depending on ``var`` with |coef| in [0.5, 2] plus random other terms."""
    a = rng.uniform(0.5, 2.0) * rng.choice((-1.0, 1.0))
    coeffs = {var: a}
    for o in others:
        if rng.random() < 0.6:
            coeffs[o] = rng.uniform(-2.0, 2.0)
    arg = LinearForm.of(coeffs, rng.uniform(-2.0, 2.0))
    return GaussianFactor(arg, rng.uniform(-2.0, 2.0), rng.uniform(0.1, 4.0))


def random_ppdf(rng: random.Random, var: str = "V", others=("X1", "X2"), kmin=1, kmax=4) -> PPDFTerm:
    k = rng.randint(kmin, kmax)
    gs = tuple(random_gaussian(rng, var, others) for _ in range(k))
    return PPDFTerm(rng.uniform(0.1, 2.0), (), gs)


def as_function(term: PPDFTerm) -> SuccessFunction:
    return SuccessFunction.of([alg.make_term(term.coeff, term.deltas, term.gaussians)])


def raw_value(term: PPDFTerm, values: Dict[str, float]) -> float:
    v = term.coeff
    for g in term.gaussians:
        v *= g.density(values)
    return v


# ---------------------------------------------------------------- random discrete programs

def _probs(rng: random.Random, k: int) -> List[float]:
    w = [rng.randint(1, 9) for _ in range(k)]
    s = sum(w)
    return [x / s for x in w]


def _plist(ps) -> str:
    return "[" + ", ".join(repr(p) for p in ps) + "]"


def hmm_program(rng: random.Random, length: int, nstates: int = 2) -> tuple:
    states = [f"s{i}" for i in range(nstates)]
    symbols = ["a", "b"]
    lines = [
        "hmm(L, T) :- msw(init, S0), step(0, L, S0, T).",
        "step(I, L, S, T) :- I >= L, T = S.",
        "step(I, L, S, T) :- I < L, J is I + 1, msw(tr(S), I, S1), msw(em(S1), J, O), obs(J, O), "
        "step(J, L, S1, T).",
        f"values(init, [{', '.join(states)}]).",
        f":- set_sw(init, {_plist(_probs(rng, nstates))}).",
    ]
    for s in states:
        lines.append(f"values(tr({s}), [{', '.join(states)}]).")
        lines.append(f":- set_sw(tr({s}), {_plist(_probs(rng, nstates))}).")
        lines.append(f"values(em({s}), [{', '.join(symbols)}]).")
        lines.append(f":- set_sw(em({s}), {_plist(_probs(rng, 2))}).")
    for j in range(1, length + 1):
        lines.append(f"obs({j}, {rng.choice(symbols)}).")
    return "\n".join(lines) + "\n", f"hmm({length}, T)."


def bn_program(rng: random.Random, nodes: int) -> tuple:
    """Random Bayesian network over ``nodes`` variables, evidence on some of them."""
    arities = [rng.randint(2, 3) for _ in range(nodes)]
    vals = [[f"v{i}_{k}" for k in range(arities[i])] for i in range(nodes)]
    parents = [sorted(rng.sample(range(i), min(i, rng.randint(0, 2)))) for i in range(nodes)]
    body = []
    decls = []
    for i in range(nodes):
        ps = parents[i]
        if ps:
            sw = f"n{i}(" + ", ".join(f"X{p}" for p in ps) + ")"
        else:
            sw = f"n{i}"
        body.append(f"msw({sw}, X{i})")
        # one switch per parent configuration
        configs = [[]]
        for p in ps:
            configs = [c + [v] for c in configs for v in vals[p]]
        for c in configs:
            name = f"n{i}({', '.join(c)})" if c else f"n{i}"
            decls.append(f"values({name}, [{', '.join(vals[i])}]).")
            decls.append(f":- set_sw({name}, {_plist(_probs(rng, arities[i]))}).")
    evidence = rng.sample(range(nodes - 1), k=min(nodes - 1, rng.randint(0, 2)))
    for e in evidence:
        body.append(f"X{e} = {rng.choice(vals[e])}")
    target = nodes - 1
    head_vars = [f"X{target}"]
    if rng.random() < 0.5 and nodes > 2:
        extra = rng.choice([i for i in range(nodes - 1) if i not in evidence] or [0])
        if extra not in evidence:
            head_vars.append(f"X{extra}")
    clause = f"q({', '.join(head_vars)}) :- " + ", ".join(body) + "."
    return clause + "\n" + "\n".join(decls) + "\n", f"q({', '.join(head_vars)})."


def branch_program(rng: random.Random, depth: int) -> tuple:
    """Rules chosen by ground switch outcomes, so alternative clauses are exclusive."""
    lines = []
    for d in range(depth):
        k = rng.randint(2, 3)
        outs = [f"c{j}" for j in range(k)]
        lines.append(f"values(sw{d}, [{', '.join(outs)}]).")
        lines.append(f":- set_sw(sw{d}, {_plist(_probs(rng, k))}).")
        nxt = f"p{d + 1}(Y)" if d + 1 < depth else None
        for j, o in enumerate(outs):
            if nxt is None or rng.random() < 0.3:
                lines.append(f"p{d}(r{d}_{j}) :- msw(sw{d}, {o}).")
            else:
                lines.append(f"p{d}(Y) :- msw(sw{d}, {o}), {nxt}.")
    return "\n".join(lines) + "\n", "p0(Y)."


def random_discrete_program(rng: random.Random) -> tuple:
    kind = rng.choice(("hmm", "bn", "branch"))
    if kind == "hmm":
        return hmm_program(rng, rng.randint(1, 5), rng.randint(2, 3))
    if kind == "bn":
        return bn_program(rng, rng.randint(2, 6))
    return branch_program(rng, rng.randint(1, 6))


# ---------------------------------------------------------------- Kalman programs

def kalman_source(observations, mu0=0.0, s0=1.0, ss=1.0, sv=1.0) -> str:
    """The library filter with the given parameters and observation facts."""
    from gauss_plp import library_source
    base = [ln for ln in library_source("kalman").splitlines()
            if not ln.startswith((":- set_sw", "obs("))]
    base.append(f":- set_sw(init, norm({mu0!r}, {s0!r})).")
    base.append(f":- set_sw(trans_err, norm(0.0, {ss!r})).")
    base.append(f":- set_sw(obs_err, norm(0.0, {sv!r})).")
    base += [f"obs({i}, {v!r})." for i, v in enumerate(observations, start=1)]
    return "\n".join(base) + "\n"
