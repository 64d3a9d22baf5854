"""Independent numeric back-ends used to check the exact engine.

The solvers below run programs concretely, with sampled or enumerated
switch outcomes, instead of symbolically; the quadrature routine integrates
densities pointwise. Only the small arithmetic helpers are shared with the
engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .algebra import LinearForm, PPDFTerm, VarRef
from .errors import OracleError
from .program import (
    ArithEval,
    BodyItem,
    Call,
    Compare,
    Constraint,
    Discrete,
    Gaussian,
    Msw,
    Program,
    Unify,
    is_arith,
    item_terms,
    map_item,
    parse_query,
    query_variables,
)
from .terms import Atom, Compound, Num, Term, Var, from_value, is_ground, ordered_vars, rename, resolve, to_value, unify

SQRT_2PI = math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------- quadrature

@dataclass(frozen=True)
class QuadratureSpec:
    """Integrate ``integrand`` over ``var`` with the other variables fixed by ``assignment``."""

    integrand: PPDFTerm
    var: str
    interval: Optional[Tuple[float, float]] = None
    tolerance: float = 1e-11
    assignment: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.interval is not None and not self.interval[0] < self.interval[1]:
            raise OracleError(f"empty interval {self.interval}")
        if not self.tolerance > 0:
            raise OracleError("tolerance must be positive")


def _factor_ranges(term: PPDFTerm, var: str, assignment: Mapping[str, float]):
    """(center, sd) of each factor solved for ``var``."""
    out = []
    for g in term.gaussians:
        a = g.arg.coef(var)
        if a == 0.0:
            continue
        rest = g.arg.drop(var).evaluate(assignment)
        out.append(((g.mean - rest) / a, math.sqrt(g.variance) / abs(a)))
    return out


def _integrand(term: PPDFTerm, var: str, assignment: Mapping[str, float]):
    const = term.coeff
    for d in term.deltas:
        if d.var == var:
            raise OracleError(f"cannot integrate over {var}: it carries a delta")
        target = assignment[d.value.name] if isinstance(d.value, VarRef) else d.value
        if assignment.get(d.var) != target:
            return lambda x: np.zeros_like(x)
    parts = []
    for g in term.gaussians:
        a = g.arg.coef(var)
        rest = g.arg.drop(var).evaluate(assignment)
        if a == 0.0:
            d = rest - g.mean
            const *= math.exp(-0.5 * d * d / g.variance) / (SQRT_2PI * math.sqrt(g.variance))
        else:
            parts.append((a, rest - g.mean, g.variance))

    def f(x):
        log = np.zeros_like(x)
        for a, off, v in parts:
            d = a * x + off
            log -= 0.5 * d * d / v + 0.5 * math.log(2.0 * math.pi * v)
        return const * np.exp(log)

    return f


def _simpson(f, a, b):
    m = 0.5 * (a + b)
    fa, fm, fb = f(a), f(m), f(b)
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def quad_integrate(spec: QuadratureSpec, max_level: int = 50, max_panels: int = 2_000_000) -> float:
    """Adaptive Simpson integration, vectorized over panels.

    Panels start no wider than the narrowest factor's standard deviation and
    are bisected until the two-level Simpson estimates agree; accepted panels
    contribute the Richardson-corrected value.
    """
    term, var = spec.integrand, spec.var
    free = set(term.vars) - {var} - set(spec.assignment)
    if free:
        raise OracleError(f"integrand has unassigned variables {sorted(free)}")
    f = _integrand(term, var, spec.assignment)
    ranges = _factor_ranges(term, var, spec.assignment)
    if spec.interval is not None:
        lo, hi = spec.interval
    elif ranges:
        lo = min(c - 12.0 * s for c, s in ranges)
        hi = max(c + 12.0 * s for c, s in ranges)
    else:
        raise OracleError("integrand does not decay: no factor depends on the variable")
    width = min((s for _, s in ranges), default=(hi - lo) / 64.0)
    n0 = int(min(max(math.ceil((hi - lo) / width), 16), 100_000))
    edges = np.linspace(lo, hi, n0 + 1)
    a, b = edges[:-1], edges[1:]
    whole = _simpson(f, a, b)
    scale = max(abs(float(whole.sum())), 1e-300)
    tol = spec.tolerance * scale
    total = 0.0
    for _ in range(max_level):
        m = 0.5 * (a + b)
        left = _simpson(f, a, m)
        right = _simpson(f, m, b)
        err = left + right - whole
        share = tol * (b - a) / (hi - lo)
        done = np.abs(err) <= 15.0 * share
        total += float(np.sum((left + right + err / 15.0)[done]))
        keep = ~done
        if not keep.any():
            return total
        a = np.concatenate([a[keep], m[keep]])
        b = np.concatenate([m[keep], b[keep]])
        whole = np.concatenate([left[keep], right[keep]])
        if a.size > max_panels:
            break
    raise OracleError("quadrature did not converge")


def pairwise_integral_density(a: Sequence[float], x: Sequence[float], mu: Sequence[float],
                              var: Sequence[float]) -> float:
    """Pairwise-product form of the integral over V of prod_i N(a_i V - x_i; mu_i, var_i).

    Returns prod_{i<j} N(a_j x_i - a_i x_j; a_i mu_j - a_j mu_i, s_ij) with
    s_ij = sum_k a_k^2 prod_{l!=k} var_l / prod_{k!=i,j} var_k. It equals the
    true integral up to a factor that does not depend on x.
    """
    n = len(a)
    total_log = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            num = sum(a[k] ** 2 * math.prod(var[l] for l in range(n) if l != k) for k in range(n))
            den = math.prod(var[k] for k in range(n) if k not in (i, j))
            s = num / den
            d = (a[j] * x[i] - a[i] * x[j]) - (a[i] * mu[j] - a[j] * mu[i])
            total_log += -0.5 * d * d / s - 0.5 * math.log(2.0 * math.pi * s)
    return math.exp(total_log)


# ---------------------------------------------------------------- concrete solver

class _NeedChoice(Exception):
    def __init__(self, key, dist: Discrete):
        self.key = key
        self.dist = dist


@dataclass
class _Frame:
    goals: Tuple[BodyItem, ...]
    subst: Dict[str, Term]
    depth: int


def _arith(t: Term, s) -> float:
    t = resolve(t, s)
    if not is_ground(t):
        raise OracleError("arithmetic on non-ground term")
    from .engine import eval_arith
    return eval_arith(t)


def _linear(t: Term):
    from .engine import linearize
    return linearize(t)


class _Solver:
    """Depth-first concrete interpreter over a fixed (possibly partial) world."""

    def __init__(self, program: Program, world: Dict, draw, match_tol: float = 0.0,
                 depth_limit: int = 10 ** 4, cache: Optional[Dict] = None):
        self.program = program
        self.cache = {} if cache is None else cache
        self.world = world
        self.draw = draw  # callable(key, dist) -> value, or raises _NeedChoice
        self.match_tol = match_tol
        self.depth_limit = depth_limit
        self.fresh = 0

    def solutions(self, goals: Sequence[BodyItem]):
        stack = [_Frame(tuple(goals), {}, 0)]
        while stack:
            fr = stack.pop()
            if not fr.goals:
                yield fr.subst
                continue
            if fr.depth >= self.depth_limit:
                raise OracleError("depth limit exceeded in concrete solver")
            item, rest = fr.goals[0], fr.goals[1:]
            children = self._step(item, rest, fr)
            stack.extend(reversed(children))

    def _step(self, item, rest, fr: _Frame) -> List[_Frame]:
        s, d = fr.subst, fr.depth + 1
        if isinstance(item, Call):
            goal = resolve(item.goal, s)
            name, arity = (goal.name, 0) if isinstance(goal, Atom) else (goal.functor, len(goal.args))
            out = []
            for clause in self.program.clauses_for(name, arity):
                self.fresh += 1
                cvars = self.cache.get(id(clause))
                if cvars is None:
                    cvars = ordered_vars([clause.head] + [t for i in clause.body for t in item_terms(i)])
                    self.cache[id(clause)] = cvars
                mapping = {v: f"_O{self.fresh}_{k}" for k, v in enumerate(cvars)}
                s2 = unify(goal, rename(clause.head, mapping), s, self.match_tol)
                if s2 is None:
                    continue
                body = tuple(map_item(i, lambda t: rename(t, mapping)) for i in clause.body)
                out.append(_Frame(body + rest, s2, d))
            return out
        if isinstance(item, Msw):
            switch = resolve(item.switch, s)
            if not is_ground(switch):
                raise OracleError("switch term must be ground when sampled")
            dist = self.program.switches.get(switch)
            if dist is None:
                raise OracleError(f"undeclared switch {switch}")
            inst = None if item.instance is None else resolve(item.instance, s)
            key = (switch, inst)
            if key not in self.world:
                self.world[key] = self.draw(key, dist)
            value = self.world[key]
            s2 = unify(item.outcome, from_value(value), s, self.match_tol)
            return [] if s2 is None else [_Frame(rest, s2, d)]
        if isinstance(item, Constraint):
            lhs, rhs = resolve(item.lhs, s), resolve(item.rhs, s)
            if not (is_arith(lhs) and is_arith(rhs)):
                s2 = unify(lhs, rhs, s, self.match_tol)
                return [] if s2 is None else [_Frame(rest, s2, d)]
            form = _linear(lhs) - _linear(rhs)
            if form.is_constant:
                tol = max(self.match_tol, 1e-9)
                return [_Frame(rest, s, d)] if abs(form.const) <= tol else []
            if len(form.coeffs) > 1:
                raise OracleError("constraint with more than one unknown in concrete execution")
            (v, a), = form.coeffs
            s2 = dict(s)
            s2[v] = Num(-form.const / a)
            return [_Frame(rest, s2, d)]
        if isinstance(item, ArithEval):
            val = Num(_arith(item.expr, s))
            s2 = unify(item.target, val, s)
            return [] if s2 is None else [_Frame(rest, s2, d)]
        if isinstance(item, Compare):
            from .engine import _COMPARE
            ok = _COMPARE[item.op](_arith(item.lhs, s), _arith(item.rhs, s))
            return [_Frame(rest, s, d)] if ok else []
        if isinstance(item, Unify):
            s2 = unify(item.lhs, item.rhs, s, self.match_tol)
            return [] if s2 is None else [_Frame(rest, s2, d)]
        raise OracleError(f"unknown goal item {item!r}")


def _answer_key(s, qvars):
    out = []
    for v in qvars:
        t = resolve(Var(v), s)
        out.append(to_value(t) if is_ground(t) else str(t))
    return tuple(out)


def _goal(query) -> Tuple[BodyItem, ...]:
    return parse_query(query) if isinstance(query, str) else tuple(query)


def enumerate_discrete(program: Program, query, budget: int = 10 ** 6) -> Dict[tuple, float]:
    """Exact answer probabilities by expanding every needed switch outcome.

    Keys are tuples of query-variable values in textual order.
    """
    if program.has_continuous:
        raise OracleError("enumeration needs a program without continuous switches")
    goal = _goal(query)
    qvars = query_variables(goal)

    def need(key, dist):
        raise _NeedChoice(key, dist)

    answers: Dict[tuple, List[float]] = {}
    pending = [({}, 1.0)]
    cache: Dict = {}
    runs = 0
    while pending:
        world, p = pending.pop()
        runs += 1
        if runs > budget:
            raise OracleError(f"enumeration budget of {budget} worlds exceeded")
        solver = _Solver(program, dict(world), need, cache=cache)
        try:
            found = {_answer_key(s, qvars) for s in solver.solutions(goal)}
        except _NeedChoice as nc:
            for v, q in zip(nc.dist.values, nc.dist.probs):
                if q > 0.0:
                    w = dict(world)
                    w[nc.key] = v
                    pending.append((w, p * q))
            continue
        for key in found:
            answers.setdefault(key, []).append(p)
    return {k: math.fsum(v) for k, v in sorted(answers.items(), key=lambda kv: repr(kv[0]))}


# ---------------------------------------------------------------- sampling

@dataclass(frozen=True)
class SampleEstimate:
    mean: float
    std_error: float
    n: int

    def __post_init__(self):
        if self.n <= 0 or self.std_error < 0:
            raise OracleError("invalid sample estimate")


def sample_answers(program: Program, query, var: str, n: int, seed: int = 0,
                   match_tol: float = 0.0) -> List[List[float]]:
    """Values of ``var`` in every solution of each of ``n`` sampled worlds."""
    goal = _goal(query)
    rng = np.random.default_rng(seed)

    cdfs: Dict[int, np.ndarray] = {}

    def draw(key, dist):
        if isinstance(dist, Gaussian):
            return dist.mean + math.sqrt(dist.variance) * float(rng.standard_normal())
        cdf = cdfs.get(id(dist))
        if cdf is None:
            cdf = cdfs[id(dist)] = np.cumsum(dist.probs)
        i = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(cdf) - 1)
        return dist.values[i]

    out = []
    cache: Dict = {}
    for _ in range(n):
        solver = _Solver(program, {}, draw, match_tol, cache=cache)
        vals = []
        for s in solver.solutions(goal):
            t = resolve(Var(var), s)
            if not isinstance(t, Num):
                raise OracleError(f"answer for {var} is not a number: {t}")
            vals.append(t.value)
        out.append(vals)
    return out


def mc_density(program: Program, query, var: str, grid: Sequence[float], n: int = 10 ** 5,
               seed: int = 0, bandwidth: float = 0.05, match_tol: float = 0.0,
               normalized: bool = False) -> List[SampleEstimate]:
    """Kernel density estimates of the answer density of ``var`` at ``grid``.

    Unnormalized estimates divide by the number of sampled worlds (failed
    worlds count as zero); normalized ones divide by the number of answers.
    With ``match_tol`` > 0 numeric unification accepts values within the
    tolerance, and unnormalized estimates are not corrected for it.
    """
    if n <= 0:
        raise OracleError("n must be positive")
    per_world = sample_answers(program, query, var, n, seed, match_tol)
    counts = np.array([len(v) for v in per_world], dtype=float)
    if counts.sum() == 0:
        raise OracleError("no sampled world produced an answer")
    flat = np.concatenate([np.asarray(v, dtype=float) for v in per_world if v])
    owner = np.repeat(np.arange(n), counts.astype(int))
    grid = np.asarray(grid, dtype=float)
    out = []
    for x in grid:
        k = np.exp(-0.5 * ((x - flat) / bandwidth) ** 2) / (bandwidth * SQRT_2PI)
        contrib = np.bincount(owner, weights=k, minlength=n)
        if normalized:
            # ratio estimator: sum(k) / sum(count), delta-method standard error
            r = contrib.sum() / counts.sum()
            resid = contrib - r * counts
            se = math.sqrt(np.sum(resid ** 2) / (n * (n - 1))) / counts.mean()
            out.append(SampleEstimate(float(r), float(se), n))
        else:
            out.append(SampleEstimate(float(contrib.mean()), float(contrib.std(ddof=1) / math.sqrt(n)), n))
    return out


# ---------------------------------------------------------------- Kalman recursion

def kalman_reference(mu0: float, s0: float, ss: float, sv: float,
                     observations: Sequence[float]) -> Tuple[float, float]:
    """Filtered mean and variance of a 1-D random walk after the observations."""
    m, p = float(mu0), float(s0)
    for y in observations:
        p = p + ss
        k = p / (p + sv)
        m = m + k * (y - m)
        p = (1.0 - k) * p
    return m, p
