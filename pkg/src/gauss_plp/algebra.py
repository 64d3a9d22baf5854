"""Closed-form success functions: sums of constrained delta/Gaussian products.

A success function is a finite sum of terms ``<phi, C>`` where ``phi`` is a
nonnegative coefficient times Dirac deltas times univariate Gaussian
densities over linear forms, and ``C`` is a conjunction of linear equalities.
All values are immutable; every constructor returns a canonical form so that
structurally equal functions compare equal.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .errors import AlgebraError
from .terms import Compound, format_value

COEF_TOL = 1e-12  # relative size below which a linear coefficient is dropped
SAT_TOL = 1e-9  # |c| above this in a row 0 = c means unsatisfiable
EVAL_TOL = 1e-9
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

_COUNTS: contextvars.ContextVar[Optional[Counter]] = contextvars.ContextVar("op_counts", default=None)


def _tick(name: str, k: int = 1) -> None:
    c = _COUNTS.get()
    if c is not None:
        c[name] += k


@contextlib.contextmanager
def count_ops():
    """Collect operation counts for the enclosed block into the yielded Counter."""
    c = Counter()
    token = _COUNTS.set(c)
    try:
        yield c
    finally:
        _COUNTS.reset(token)


def normal_pdf(x: float, mean: float, var: float) -> float:
    d = x - mean
    return math.exp(-0.5 * d * d / var) / math.sqrt(2.0 * math.pi * var)


def _fmt(x: float) -> str:
    return f"{x + 0.0:.12g}"  # + 0.0 turns -0.0 into 0.0


# ---------------------------------------------------------------- linear forms

@dataclass(frozen=True)
class LinearForm:
    """sum(coeffs[v] * v) + const, coefficients sorted by variable name."""

    coeffs: Tuple[Tuple[str, float], ...] = ()
    const: float = 0.0

    @staticmethod
    def of(coeffs: Mapping[str, float], const: float = 0.0, clean: bool = True) -> "LinearForm":
        items = [(v, float(a)) for v, a in coeffs.items() if a != 0.0]
        if clean and items:
            big = max(abs(a) for _, a in items)
            items = [(v, a) for v, a in items if abs(a) > COEF_TOL * big]
        return LinearForm(tuple(sorted(items)), float(const))

    @staticmethod
    def var(name: str, coef: float = 1.0) -> "LinearForm":
        return LinearForm(((name, float(coef)),), 0.0) if coef != 0.0 else LinearForm()

    @staticmethod
    def constant(c: float) -> "LinearForm":
        return LinearForm((), float(c))

    @property
    def as_dict(self) -> Dict[str, float]:
        return dict(self.coeffs)

    @property
    def vars(self) -> Tuple[str, ...]:
        return tuple(v for v, _ in self.coeffs)

    @property
    def is_constant(self) -> bool:
        return not self.coeffs

    def coef(self, v: str) -> float:
        for name, a in self.coeffs:
            if name == v:
                return a
        return 0.0

    def __add__(self, other: "LinearForm") -> "LinearForm":
        d = self.as_dict
        for v, a in other.coeffs:
            d[v] = d.get(v, 0.0) + a
        return LinearForm.of(d, self.const + other.const)

    def __neg__(self) -> "LinearForm":
        return LinearForm(tuple((v, -a) for v, a in self.coeffs), -self.const)

    def __sub__(self, other: "LinearForm") -> "LinearForm":
        return self + (-other)

    def scale(self, k: float) -> "LinearForm":
        if k == 0.0:
            return LinearForm()
        return LinearForm(tuple((v, a * k) for v, a in self.coeffs), self.const * k)

    def shift(self, c: float) -> "LinearForm":
        return LinearForm(self.coeffs, self.const + c)

    def drop(self, v: str) -> "LinearForm":
        return LinearForm(tuple((n, a) for n, a in self.coeffs if n != v), self.const)

    def substitute(self, v: str, form: "LinearForm") -> "LinearForm":
        a = self.coef(v)
        if a == 0.0:
            return self
        return self.drop(v) + form.scale(a)

    def assign(self, values: Mapping[str, float]) -> "LinearForm":
        """Substitute numeric values for the variables that have one."""
        const = self.const
        rest = {}
        for v, a in self.coeffs:
            if v in values:
                const += a * values[v]
            else:
                rest[v] = a
        return LinearForm.of(rest, const)

    def evaluate(self, values: Mapping[str, float]) -> float:
        total = self.const
        for v, a in self.coeffs:
            if v not in values:
                raise AlgebraError(f"no value for variable {v}")
            total += a * float(values[v])
        return total

    def format(self) -> str:
        parts: List[str] = []
        for v, a in self.coeffs:
            mag = abs(a)
            body = v if mag == 1.0 else f"{_fmt(mag)}*{v}"
            if not parts:
                parts.append(body if a > 0 else "-" + body)
            else:
                parts.append(("+ " if a > 0 else "- ") + body)
        if not parts:
            return _fmt(self.const)
        if self.const != 0.0:
            parts.append(("+ " if self.const > 0 else "- ") + _fmt(abs(self.const)))
        return " ".join(parts)

    def __str__(self) -> str:
        return self.format()


# ---------------------------------------------------------------- factors

@dataclass(frozen=True)
class GaussianFactor:
    """Density N(mean, variance) evaluated at the value of ``arg``."""

    arg: LinearForm
    mean: float
    variance: float

    def __post_init__(self):
        if not (self.variance > 0.0) or not math.isfinite(self.variance):
            raise AlgebraError(f"Gaussian variance must be positive, got {self.variance!r}")

    @property
    def vars(self) -> Tuple[str, ...]:
        return self.arg.vars

    def density(self, values: Mapping[str, float]) -> float:
        return normal_pdf(self.arg.evaluate(values), self.mean, self.variance)

    def canonical(self) -> Tuple[float, Optional["GaussianFactor"]]:
        """(scale, factor) with factor's arg constant-free and leading coefficient 1.

        A constant argument evaluates to a number: (density, None).
        """
        mean = self.mean - self.arg.const
        if self.arg.is_constant:
            return normal_pdf(0.0, mean, self.variance), None
        a = self.arg.coeffs[0][1]
        if a == 1.0 and self.arg.const == 0.0:
            return 1.0, self
        arg = LinearForm(tuple((v, c / a) for v, c in self.arg.coeffs), 0.0)
        return 1.0 / abs(a), GaussianFactor(arg, mean / a, self.variance / (a * a))

    def format(self) -> str:
        return f"N({self.arg.format()}; {_fmt(self.mean)}, {_fmt(self.variance)})"


@dataclass(frozen=True)
class VarRef:
    """Delta value that is another variable: delta_Y(X) ties X to Y."""

    name: str


DeltaValue = Union[float, str, Compound, VarRef]


@dataclass(frozen=True)
class DeltaFactor:
    var: str
    value: DeltaValue

    def format(self) -> str:
        v = self.value.name if isinstance(self.value, VarRef) else format_value(self.value)
        return f"delta({self.var}={v})"


def _value_key(v: DeltaValue):
    order = {float: 0, str: 1, Compound: 2, VarRef: 3}
    return order[type(v)], format_value(v) if not isinstance(v, VarRef) else v.name


def _same_value(a: DeltaValue, b: DeltaValue) -> bool:
    if isinstance(a, float) and isinstance(b, float):
        return a == b
    return type(a) is type(b) and a == b


@dataclass(frozen=True)
class PPDFTerm:
    coeff: float
    deltas: Tuple[DeltaFactor, ...] = ()
    gaussians: Tuple[GaussianFactor, ...] = ()

    @property
    def vars(self) -> Tuple[str, ...]:
        out = {}
        for d in self.deltas:
            out[d.var] = None
            if isinstance(d.value, VarRef):
                out[d.value.name] = None
        for g in self.gaussians:
            for v in g.vars:
                out[v] = None
        return tuple(sorted(out))

    def delta_for(self, var: str) -> Optional[DeltaFactor]:
        for d in self.deltas:
            if d.var == var:
                return d
        return None

    def gaussian_vars(self) -> set:
        return {v for g in self.gaussians for v in g.vars}


# ---------------------------------------------------------------- constraints

def _rref(rows: Iterable[LinearForm]) -> Optional[Tuple[LinearForm, ...]]:
    """Reduced row-echelon form of ``row = 0`` equations, or None if unsatisfiable."""
    work = [r.as_dict for r in rows]
    consts = [r.const for r in rows]
    variables = sorted({v for r in work for v in r})
    out: List[Tuple[Dict[str, float], float]] = []
    pending = list(zip(work, consts))
    for v in variables:
        best, best_abs = -1, 0.0
        for i, (r, _) in enumerate(pending):
            a = abs(r.get(v, 0.0))
            big = max((abs(x) for x in r.values()), default=0.0)
            if a > best_abs and a > COEF_TOL * big:
                best, best_abs = i, a
        if best < 0:
            continue
        prow, pc = pending.pop(best)
        a = prow[v]
        prow = {k: x / a for k, x in prow.items()}
        pc = pc / a
        prow[v] = 1.0

        def eliminate(r, c):
            f = r.get(v, 0.0)
            if f == 0.0:
                return r, c
            nr = dict(r)
            for k, x in prow.items():
                nr[k] = nr.get(k, 0.0) - f * x
            nr.pop(v, None)
            big = max((abs(x) for x in nr.values()), default=0.0)
            nr = {k: x for k, x in nr.items() if abs(x) > COEF_TOL * max(big, 1.0) and x != 0.0}
            return nr, c - f * pc

        pending = [eliminate(r, c) for r, c in pending]
        out = [eliminate(r, c) for r, c in out]
        out.append((prow, pc))
    for r, c in pending:
        if r:
            raise AssertionError("elimination left a nonzero row")
        if abs(c) > SAT_TOL:
            return None
    forms = [LinearForm.of(r, c) for r, c in out]
    forms.sort(key=lambda f: f.coeffs[0][0])
    return tuple(forms)


@dataclass(frozen=True)
class ConstraintSet:
    """Conjunction of ``row = 0`` equations in reduced row-echelon form."""

    rows: Tuple[LinearForm, ...] = ()
    unsat: bool = False

    @staticmethod
    def of(rows: Iterable[LinearForm]) -> "ConstraintSet":
        reduced = _rref(list(rows))
        if reduced is None:
            return UNSAT
        return ConstraintSet(reduced)

    @staticmethod
    def equation(lhs: LinearForm, rhs: LinearForm) -> "ConstraintSet":
        return ConstraintSet.of([lhs - rhs])

    @property
    def vars(self) -> Tuple[str, ...]:
        return tuple(sorted({v for r in self.rows for v in r.vars}))

    @property
    def is_true(self) -> bool:
        return not self.unsat and not self.rows

    def __len__(self) -> int:
        return len(self.rows)

    def mentions(self, v: str) -> bool:
        return any(r.coef(v) != 0.0 for r in self.rows)

    def solve_for(self, v: str) -> Optional[Tuple[LinearForm, "ConstraintSet"]]:
        """Solved form ``v = form`` from the first row mentioning v, and the remaining rows."""
        for i, r in enumerate(self.rows):
            a = r.coef(v)
            if a != 0.0:
                form = r.drop(v).scale(-1.0 / a)
                rest = [x.substitute(v, form) for j, x in enumerate(self.rows) if j != i]
                return form, ConstraintSet.of(rest)
        return None

    def holds(self, values: Mapping[str, float], tol: float = EVAL_TOL) -> bool:
        if self.unsat:
            return False
        return all(abs(r.evaluate(values)) <= tol for r in self.rows)

    def format(self) -> str:
        if self.unsat:
            return "false"
        parts = []
        for r in self.rows:
            pivot, a = r.coeffs[0]
            rest = r.drop(pivot).scale(-1.0 / a)
            parts.append(f"{pivot} = {rest.format()}")
        return ", ".join(parts)


TRUE = ConstraintSet()
UNSAT = ConstraintSet((), True)


# ---------------------------------------------------------------- term normalization

class _UnionFind:
    def __init__(self):
        self.parent: Dict[str, str] = {}

    def find(self, x: str) -> str:
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            lo, hi = sorted((ra, rb))
            self.parent[hi] = lo


def _merge_same_arg(g1: GaussianFactor, g2: GaussianFactor) -> Tuple[float, GaussianFactor]:
    s = g1.variance + g2.variance
    scale = normal_pdf(g1.mean, g2.mean, s)
    mean = (g1.mean * g2.variance + g2.mean * g1.variance) / s
    var = g1.variance * g2.variance / s
    return scale, GaussianFactor(g1.arg, mean, var)


def _compact(gaussians: List[GaussianFactor]) -> Tuple[float, List[GaussianFactor]]:
    """Rewrite a Gaussian product as an equal product with at most one factor per variable.

    Uses a triangular (LDL) factorization of the quadratic form in the
    exponent; the leftover constant comes back as a scale.
    """
    _tick("compact")
    variables = sorted({v for g in gaussians for v in g.vars})
    n = len(variables)
    idx = {v: i for i, v in enumerate(variables)}
    P = [[0.0] * n for _ in range(n)]
    h = [0.0] * n
    c0 = 0.0
    log_scale = 0.0
    for g in gaussians:
        w = 1.0 / g.variance
        a = [0.0] * n
        for v, x in g.arg.coeffs:
            a[idx[v]] = x
        mu = g.mean - g.arg.const
        for i in range(n):
            if a[i] == 0.0:
                continue
            h[i] += w * mu * a[i]
            for j in range(n):
                P[i][j] += w * a[i] * a[j]
        c0 += w * mu * mu
        log_scale -= LOG_SQRT_2PI + 0.5 * math.log(g.variance)
    diag_scale = max((P[i][i] for i in range(n)), default=1.0)
    out: List[GaussianFactor] = []
    active = list(range(n))
    while active:
        i = active.pop(0)
        pii = P[i][i]
        if pii <= COEF_TOL * diag_scale:
            continue
        coeffs = {variables[i]: 1.0}
        for j in active:
            if P[i][j] != 0.0:
                coeffs[variables[j]] = P[i][j] / pii
        mean = h[i] / pii
        out.append(GaussianFactor(LinearForm.of(coeffs), mean, 1.0 / pii))
        log_scale += LOG_SQRT_2PI - 0.5 * math.log(pii)
        for j in active:
            for k in active:
                P[j][k] -= P[j][i] * P[i][k] / pii
            h[j] -= P[j][i] * h[i] / pii
        c0 -= h[i] * h[i] / pii
    log_scale -= 0.5 * max(c0, 0.0)
    return math.exp(log_scale), out


def _normalize_gaussians(coeff: float, gaussians: Iterable[GaussianFactor]):
    merged: Dict[LinearForm, GaussianFactor] = {}
    for g in gaussians:
        s, cg = g.canonical()
        coeff *= s
        if cg is None:
            continue
        prev = merged.get(cg.arg)
        if prev is not None:
            _tick("gauss_merge")
            s, cg = _merge_same_arg(prev, cg)
            coeff *= s
        merged[cg.arg] = cg
    gs = list(merged.values())
    nvars = len({v for g in gs for v in g.vars})
    if len(gs) > nvars:
        s, gs = _compact(gs)
        coeff *= s
        gs2 = []
        for g in gs:
            s, cg = g.canonical()
            coeff *= s
            if cg is not None:
                gs2.append(cg)
        gs = gs2
    gs.sort(key=lambda g: (g.arg.coeffs, g.mean, g.variance))
    return coeff, tuple(gs)


def make_term(coeff: float, deltas: Iterable[DeltaFactor] = (), gaussians: Iterable[GaussianFactor] = (),
              rows: Iterable[LinearForm] = ()) -> Optional["ConstrainedTerm"]:
    """Canonical constrained term, or None when it is identically zero."""
    _tick("term_normalize")
    coeff = float(coeff)
    if coeff < 0.0:
        raise AlgebraError(f"negative coefficient {coeff!r}")
    if coeff == 0.0:
        return None
    gaussians = list(gaussians)
    rows = list(rows)
    deltas = list(deltas)

    uf = _UnionFind()
    ground: Dict[str, DeltaValue] = {}
    for d in deltas:
        uf.find(d.var)
        if isinstance(d.value, VarRef):
            uf.union(d.var, d.value.name)
    for d in deltas:
        if isinstance(d.value, VarRef):
            continue
        r = uf.find(d.var)
        if r in ground:
            if not _same_value(ground[r], d.value):
                return None
        else:
            ground[r] = d.value

    dense_vars = {v for g in gaussians for v in g.vars} | {v for r in rows for v in r.vars}
    classes: Dict[str, List[str]] = {}
    for v in list(uf.parent):
        classes.setdefault(uf.find(v), []).append(v)

    new_deltas: List[DeltaFactor] = []
    values: Dict[str, float] = {}
    for root, members in classes.items():
        members.sort()
        if root in ground:
            val = ground[root]
            for m in members:
                new_deltas.append(DeltaFactor(m, val))
                if m in dense_vars:
                    if not isinstance(val, float):
                        raise AlgebraError(
                            f"variable {m} has non-numeric value {format_value(val)} "
                            "but appears in a density or constraint")
                    values[m] = val
        elif any(m in dense_vars for m in members):
            for m in members:
                if m != root:
                    rows.append(LinearForm.of({m: 1.0, root: -1.0}))
        else:
            for m in members:
                if m != root:
                    new_deltas.append(DeltaFactor(m, VarRef(root)))

    if values:
        gaussians = [GaussianFactor(g.arg.assign(values), g.mean, g.variance)
                     if any(v in values for v in g.vars) else g for g in gaussians]
        rows = [r.assign(values) for r in rows]

    cs = ConstraintSet.of(rows)
    if cs.unsat:
        return None
    coeff, gs = _normalize_gaussians(coeff, gaussians)
    if coeff == 0.0 or not math.isfinite(coeff):
        if coeff == 0.0:
            return None
        raise AlgebraError("coefficient overflow")
    new_deltas.sort(key=lambda d: d.var)
    return ConstrainedTerm(PPDFTerm(coeff, tuple(new_deltas), gs), cs)


# ---------------------------------------------------------------- success functions

@dataclass(frozen=True)
class ConstrainedTerm:
    term: PPDFTerm
    constraints: ConstraintSet = TRUE

    @property
    def vars(self) -> Tuple[str, ...]:
        return tuple(sorted(set(self.term.vars) | set(self.constraints.vars)))

    def structure_key(self):
        return (self.term.deltas, self.term.gaussians, self.constraints.rows)

    def with_coeff(self, c: float) -> "ConstrainedTerm":
        return ConstrainedTerm(PPDFTerm(c, self.term.deltas, self.term.gaussians), self.constraints)

    def sort_key(self):
        dsig = tuple((d.var,) + _value_key(d.value) for d in self.term.deltas)
        return (dsig, self.constraints.format(), tuple(g.format() for g in self.term.gaussians),
                self.term.coeff)

    def format(self) -> str:
        parts = [_fmt(self.term.coeff)]
        parts += [d.format() for d in self.term.deltas]
        parts += [g.format() for g in self.term.gaussians]
        text = " * ".join(parts)
        if self.constraints.rows:
            text += " | " + self.constraints.format()
        return text


def _rebuild(ct: ConstrainedTerm, coeff=None, deltas=None, gaussians=None, rows=None):
    return make_term(
        ct.term.coeff if coeff is None else coeff,
        ct.term.deltas if deltas is None else deltas,
        ct.term.gaussians if gaussians is None else gaussians,
        ct.constraints.rows if rows is None else rows,
    )


@dataclass(frozen=True)
class SuccessFunction:
    terms: Tuple[ConstrainedTerm, ...] = ()

    @staticmethod
    def of(terms: Iterable[Optional[ConstrainedTerm]]) -> "SuccessFunction":
        """Drop zero terms, merge structurally identical ones, sort canonically."""
        acc: Dict[tuple, ConstrainedTerm] = {}
        for t in terms:
            if t is None or t.term.coeff == 0.0 or t.constraints.unsat:
                continue
            key = t.structure_key()
            prev = acc.get(key)
            acc[key] = t if prev is None else prev.with_coeff(prev.term.coeff + t.term.coeff)
        return SuccessFunction(tuple(sorted(acc.values(), key=ConstrainedTerm.sort_key)))

    @staticmethod
    def constant(k: float = 1.0) -> "SuccessFunction":
        return SuccessFunction.of([make_term(k)])

    @staticmethod
    def delta(var: str, value: DeltaValue) -> "SuccessFunction":
        if isinstance(value, (int,)) and not isinstance(value, bool):
            value = float(value)
        return SuccessFunction.of([make_term(1.0, [DeltaFactor(var, value)])])

    @staticmethod
    def gaussian(arg: LinearForm, mean: float, variance: float, coeff: float = 1.0) -> "SuccessFunction":
        return SuccessFunction.of([make_term(coeff, (), [GaussianFactor(arg, mean, variance)])])

    @staticmethod
    def constraint(cs: Union[ConstraintSet, Iterable[LinearForm]]) -> "SuccessFunction":
        rows = cs.rows if isinstance(cs, ConstraintSet) else list(cs)
        if isinstance(cs, ConstraintSet) and cs.unsat:
            return ZERO
        return SuccessFunction.of([make_term(1.0, (), (), rows)])

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def D(self, i: int) -> PPDFTerm:
        return self.terms[i].term

    def C(self, i: int) -> ConstraintSet:
        return self.terms[i].constraints

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def vars(self) -> Tuple[str, ...]:
        return tuple(sorted({v for t in self.terms for v in t.vars}))

    def __add__(self, other: "SuccessFunction") -> "SuccessFunction":
        return SuccessFunction.of(self.terms + other.terms)

    def __mul__(self, other: "SuccessFunction") -> "SuccessFunction":
        return join(self, other)

    def scale(self, k: float) -> "SuccessFunction":
        return SuccessFunction.of(t.with_coeff(t.term.coeff * k) for t in self.terms)

    def format(self) -> str:
        if not self.terms:
            return "0"
        if len(self.terms) == 1 and self.terms[0] == ONE_TERM:
            return "1"
        return " + ".join(t.format() for t in self.terms)

    def __str__(self) -> str:
        return self.format()


ONE_TERM = ConstrainedTerm(PPDFTerm(1.0))
ONE = SuccessFunction((ONE_TERM,))
ZERO = SuccessFunction(())


# ---------------------------------------------------------------- operations

def join(psi1: SuccessFunction, psi2: SuccessFunction) -> SuccessFunction:
    out = []
    for a in psi1.terms:
        for b in psi2.terms:
            _tick("join_pair")
            out.append(make_term(
                a.term.coeff * b.term.coeff,
                a.term.deltas + b.term.deltas,
                a.term.gaussians + b.term.gaussians,
                a.constraints.rows + b.constraints.rows,
            ))
    return SuccessFunction.of(out)


def simplify(psi: SuccessFunction) -> SuccessFunction:
    return SuccessFunction.of(
        _rebuild(t) for t in psi.terms)


def _project_term(ct: ConstrainedTerm, v: str) -> Optional[ConstrainedTerm]:
    solved = ct.constraints.solve_for(v)
    if solved is None:
        return ct
    _tick("project")
    form, rest = solved
    if rest.unsat:
        return None
    gs = [GaussianFactor(g.arg.substitute(v, form), g.mean, g.variance) for g in ct.term.gaussians]
    return _rebuild(ct, gaussians=gs, rows=rest.rows)


def project(psi: SuccessFunction, v: str) -> SuccessFunction:
    return SuccessFunction.of(_project_term(t, v) for t in psi.terms)


def _integrate_gaussians(coeff: float, gaussians: Sequence[GaussianFactor], v: str):
    """Integrate the product over v; returns (coeff, factors without v)."""
    keep: List[GaussianFactor] = []
    out: List[GaussianFactor] = []
    m: Optional[LinearForm] = None
    s = 0.0
    for g in gaussians:
        a = g.arg.coef(v)
        if a == 0.0:
            keep.append(g)
            continue
        # N_{aV+R}(mu, var) = (1/|a|) N_V((mu - R)/a, var/a^2)
        mk = (LinearForm.constant(g.mean) - g.arg.drop(v)).scale(1.0 / a)
        sk = g.variance / (a * a)
        coeff /= abs(a)
        if m is None:
            m, s = mk, sk
            continue
        _tick("integrate_merge")
        out.append(GaussianFactor(m - mk, 0.0, s + sk))
        m = (m.scale(sk) + mk.scale(s)).scale(1.0 / (s + sk))
        s = s * sk / (s + sk)
    return coeff, keep + out


def _drop_delta(ct: ConstrainedTerm, v: str, valid=None) -> Optional[ConstrainedTerm]:
    """Sum/integrate v out of a term carrying a delta on v."""
    d = ct.term.delta_for(v)
    if valid is not None and not isinstance(d.value, VarRef):
        if not any(_same_value(d.value, x) for x in valid):
            raise AlgebraError(f"value {format_value(d.value)} of {v} is outside its declared range")
    deltas = [x for x in ct.term.deltas if x.var != v]
    if isinstance(d.value, VarRef):
        return _rebuild(ct, deltas=deltas)
    dependents = sorted(x.var for x in deltas if x.value == VarRef(v))
    if dependents:
        root = dependents[0]
        deltas = [x for x in deltas if x.var != root]
        deltas = [DeltaFactor(x.var, VarRef(root)) if x.value == VarRef(v) else x for x in deltas]
    return _rebuild(ct, deltas=deltas)


def _alias_root(ct: ConstrainedTerm, v: str) -> bool:
    return any(d.value == VarRef(v) for d in ct.term.deltas)


def _reroot(ct: ConstrainedTerm, v: str) -> Optional[ConstrainedTerm]:
    deltas = list(ct.term.deltas)
    dependents = sorted(x.var for x in deltas if x.value == VarRef(v))
    root = dependents[0]
    deltas = [x for x in deltas if x.var != root]
    deltas = [DeltaFactor(x.var, VarRef(root)) if x.value == VarRef(v) else x for x in deltas]
    return _rebuild(ct, deltas=deltas)


def _integrate_term(ct: ConstrainedTerm, v: str) -> Optional[ConstrainedTerm]:
    if ct.constraints.mentions(v):
        raise AlgebraError(f"cannot integrate out {v}: it still occurs in a constraint (project first)")
    if ct.term.delta_for(v) is not None:
        return _drop_delta(ct, v)
    if _alias_root(ct, v):
        return _reroot(ct, v)
    if v not in ct.term.gaussian_vars():
        return ct
    _tick("integrate")
    coeff, gs = _integrate_gaussians(ct.term.coeff, ct.term.gaussians, v)
    return _rebuild(ct, coeff=coeff, gaussians=gs)


def integrate_out(psi: SuccessFunction, v: str) -> SuccessFunction:
    return SuccessFunction.of(_integrate_term(t, v) for t in psi.terms)


def marginalize_discrete(psi: SuccessFunction, v: str, values: Optional[Sequence] = None) -> SuccessFunction:
    out = []
    for t in psi.terms:
        if v in t.term.gaussian_vars() or t.constraints.mentions(v):
            raise AlgebraError(f"discrete variable {v} occurs in a density or constraint")
        if t.term.delta_for(v) is not None:
            out.append(_drop_delta(t, v, values))
        elif _alias_root(t, v):
            out.append(_reroot(t, v))
        else:
            out.append(t)
    return SuccessFunction.of(out)


def _marginalize_one(psi: SuccessFunction, v: str) -> SuccessFunction:
    out = []
    for t in psi.terms:
        if t.term.delta_for(v) is not None:
            out.append(_drop_delta(t, v))
            continue
        if _alias_root(t, v):
            out.append(_reroot(t, v))
            continue
        t2 = _project_term(t, v)
        if t2 is not None:
            t2 = _integrate_term(t2, v)
        out.append(t2)
    return SuccessFunction.of(out)


def is_continuous_in(psi: SuccessFunction, v: str) -> bool:
    return any(v in t.term.gaussian_vars() or t.constraints.mentions(v) for t in psi.terms)


def marginalize(psi: SuccessFunction, variables: Iterable[str]) -> SuccessFunction:
    """Remove ``variables`` from psi.

    Variables are taken in the given order as their order of first
    appearance: continuous ones (those in a density or constraint) are
    eliminated first in reverse order, then discrete ones in order.
    """
    order = list(dict.fromkeys(variables))
    cont = [v for v in order if is_continuous_in(psi, v)]
    disc = [v for v in order if v not in cont]
    for v in reversed(cont):
        psi = _marginalize_one(psi, v)
    for v in disc:
        psi = _marginalize_one(psi, v)
    return psi


def _delta_matches(d: DeltaFactor, values: Mapping[str, object]) -> bool:
    x = values[d.var]
    target = values[d.value.name] if isinstance(d.value, VarRef) else d.value
    if isinstance(x, (int, float)) and isinstance(target, (int, float)):
        return math.isclose(float(x), float(target), rel_tol=1e-12, abs_tol=1e-12)
    return x == target


def evaluate(psi: SuccessFunction, assignment: Mapping[str, object]) -> float:
    """Numeric value of psi at a full assignment of its free variables."""
    missing = [v for v in psi.vars if v not in assignment]
    if missing:
        raise AlgebraError(f"no value for variable(s) {', '.join(missing)}")
    total = 0.0
    for t in psi.terms:
        if not all(_delta_matches(d, assignment) for d in t.term.deltas):
            continue
        if not t.constraints.holds(assignment):
            continue
        val = t.term.coeff
        for g in t.term.gaussians:
            val *= g.density(assignment)
        total += val
    return total


def total_mass(psi: SuccessFunction) -> float:
    """Integral/sum of psi over all of its variables."""
    rest = marginalize(psi, psi.vars)
    if rest.vars:
        raise AlgebraError(f"variables {rest.vars} could not be eliminated")
    return math.fsum(t.term.coeff for t in rest.terms)


def normalize(psi: SuccessFunction, var: str) -> SuccessFunction:
    """Rescale psi so that its total mass over ``var`` is 1."""
    rest = marginalize(psi, [var])
    if rest.vars:
        raise AlgebraError(f"cannot normalize over {var}: result still mentions {', '.join(rest.vars)}")
    mass = math.fsum(t.term.coeff for t in rest.terms)
    if not mass > 0.0:
        raise AlgebraError("cannot normalize a function with zero total mass")
    return psi.scale(1.0 / mass)


def max_gaussians(psi: SuccessFunction) -> int:
    return max((len(t.term.gaussians) for t in psi.terms), default=0)


def max_constraints(psi: SuccessFunction) -> int:
    return max((len(t.constraints) for t in psi.terms), default=0)


# ---------------------------------------------------------------- serialization

def _json_value(v: DeltaValue):
    if isinstance(v, float):
        return float(_fmt(v))
    if isinstance(v, VarRef):
        return {"var": v.name}
    return format_value(v)


def _json_real(x: float) -> float:
    return float(_fmt(x))


def _json_form(f: LinearForm) -> dict:
    return {"coeffs": {v: _json_real(a) for v, a in f.coeffs}, "const": _json_real(f.const)}


def to_json_terms(psi: SuccessFunction) -> list:
    out = []
    for t in psi.terms:
        out.append({
            "coeff": _json_real(t.term.coeff),
            "deltas": [{"var": d.var, "value": _json_value(d.value)} for d in t.term.deltas],
            "gaussians": [{"arg": _json_form(g.arg), "mean": _json_real(g.mean),
                           "variance": _json_real(g.variance)} for g in t.term.gaussians],
            "constraints": [_json_form(r) for r in t.constraints.rows],
        })
    return out
