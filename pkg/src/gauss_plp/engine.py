"""Symbolic derivations and bottom-up success-function assembly.

A derivation step either resolves a user predicate against a clause (PCR),
skips a switch (MSW), skips a linear constraint (CONS), or evaluates a
built-in (ARITH: is/2, comparisons, unification, ground equality checks).
The success function of a goal is computed from its children: MSW joins the
switch density, CONS joins the constraint, and binding steps add deltas for
the bindings they make and then marginalize variables local to the child.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

from . import algebra as alg
from .algebra import LinearForm, SuccessFunction, VarRef
from .errors import AlgebraError, DepthLimitExceeded, DerivationError, IndependenceViolation
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
    format_goal,
    item_terms,
    map_item,
    parse_query,
    query_variables,
)
from .terms import (
    Atom,
    Compound,
    Num,
    Term,
    Var,
    format_term,
    is_ground,
    ordered_vars,
    rename,
    resolve,
    term_vars,
    to_value,
    unify,
)

__all__ = [
    "unify", "Step", "DerivationNode", "derive", "derivation_variables",
    "success_function", "QueryResult", "answer_query", "linearize", "eval_arith",
]

DEFAULT_DEPTH = 10 ** 4
GROUND_EQ_TOL = 1e-9

CONT, DISC, NUMD = "c", "d", "n"


# ---------------------------------------------------------------- arithmetic

def eval_arith(t: Term) -> float:
    """Value of a ground arithmetic expression."""
    stack: List[Tuple[Term, bool]] = [(t, False)]
    vals: List[float] = []
    while stack:
        x, done = stack.pop()
        if isinstance(x, Num):
            vals.append(x.value)
            continue
        if isinstance(x, Var):
            raise DerivationError(f"arithmetic on unbound variable {x.name}")
        if not isinstance(x, Compound) or x.functor not in "+-*/" or len(x.args) not in (1, 2):
            raise DerivationError(f"not an arithmetic expression: {format_term(x)}")
        if not done:
            stack.append((x, True))
            stack.extend((a, False) for a in reversed(x.args))
            continue
        if len(x.args) == 1:
            if x.functor != "-":
                raise DerivationError(f"not an arithmetic expression: {format_term(x)}")
            vals.append(-vals.pop())
            continue
        b, a = vals.pop(), vals.pop()
        if x.functor == "+":
            vals.append(a + b)
        elif x.functor == "-":
            vals.append(a - b)
        elif x.functor == "*":
            vals.append(a * b)
        else:
            if b == 0.0:
                raise DerivationError(f"division by zero in {format_term(t)}")
            vals.append(a / b)
    return vals[0]


def linearize(t: Term) -> LinearForm:
    """Linear form of an arithmetic term over variables and numbers."""
    if isinstance(t, Num):
        return LinearForm.constant(t.value)
    if isinstance(t, Var):
        return LinearForm.var(t.name)
    if isinstance(t, Compound) and t.functor in "+-*/":
        if len(t.args) == 1 and t.functor == "-":
            return -linearize(t.args[0])
        if len(t.args) == 2:
            a, b = linearize(t.args[0]), linearize(t.args[1])
            if t.functor == "+":
                return a + b
            if t.functor == "-":
                return a - b
            if t.functor == "*":
                if a.is_constant:
                    return b.scale(a.const)
                if b.is_constant:
                    return a.scale(b.const)
                raise DerivationError(f"nonlinear constraint term {format_term(t)}")
            if b.is_constant:
                if b.const == 0.0:
                    raise DerivationError(f"division by zero in {format_term(t)}")
                return a.scale(1.0 / b.const)
            raise DerivationError(f"nonlinear constraint term {format_term(t)}")
    raise DerivationError(f"not a linear arithmetic term: {format_term(t)}")


_COMPARE = {
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    "=<": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
    "=:=": lambda a, b: a == b,
    "=\\=": lambda a, b: a != b,
}


# ---------------------------------------------------------------- tree

@dataclass(frozen=True)
class Step:
    """The edge that produced a node from its parent goal.

    ``mgu`` is the unifier restricted to the parent goal's variables.
    """

    kind: str  # PCR, FACT, MSW, CONS, ARITH
    clause_id: Optional[int] = None
    mgu: Tuple[Tuple[str, Term], ...] = ()


@dataclass(frozen=True)
class _PathState:
    types: Tuple[Tuple[str, str], ...] = ()
    store: alg.ConstraintSet = alg.TRUE
    used: FrozenSet = frozenset()

    @property
    def type_map(self) -> Dict[str, str]:
        return dict(self.types)


@dataclass(eq=False)
class DerivationNode:
    goal: Tuple[BodyItem, ...]
    depth: int = 0
    step: Optional[Step] = None
    kind: str = "LEAF"  # how the children were derived
    children: List["DerivationNode"] = field(default_factory=list)
    vc: FrozenSet[str] = frozenset()
    vd: FrozenSet[str] = frozenset()
    state: _PathState = field(default_factory=_PathState, repr=False)
    info: object = None  # switch density for MSW, constraint row for CONS
    psi: Optional[SuccessFunction] = None

    @property
    def goal_vars(self) -> List[str]:
        return ordered_vars(t for i in self.goal for t in item_terms(i))

    @property
    def is_success(self) -> bool:
        return not self.goal

    def format_goal(self) -> str:
        return format_goal(self.goal)

    def walk(self):
        """Pre-order iteration over the subtree."""
        stack = [self]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(reversed(n.children))

    def leaves(self):
        return [n for n in self.walk() if not n.children]


class _Prune(Exception):
    pass


def _merge_type(a: Optional[str], b: str, var: str) -> str:
    if a is None or a == b:
        return b
    pair = {a, b}
    if pair == {CONT, NUMD}:
        return CONT
    if pair == {DISC, NUMD}:
        return DISC
    raise DerivationError(f"variable {var} is used both as a continuous and a discrete variable")


def _with_types(state: _PathState, updates: Dict[str, str]) -> _PathState:
    types = state.type_map
    for v, t in updates.items():
        types[v] = _merge_type(types.get(v), t, v)
    return _PathState(tuple(sorted(types.items())), state.store, state.used)


def _apply_bindings(state: _PathState, theta: Dict[str, Term]) -> _PathState:
    """Carry the path's types and constraint store through a substitution."""
    if not theta:
        return state
    types = state.type_map
    new_types: Dict[str, str] = {}
    values: Dict[str, float] = {}
    renames: Dict[str, str] = {}
    store_vars = set(state.store.vars)
    for v, ty in types.items():
        t = resolve(Var(v), theta)
        if isinstance(t, Var):
            if t.name != v:
                renames[v] = t.name
            new_types[t.name] = _merge_type(new_types.get(t.name), ty, t.name)
            continue
        if isinstance(t, Num):
            if v in store_vars:
                values[v] = t.value
            continue
        if ty in (CONT, NUMD) or v in store_vars:
            raise _Prune()
    for v in store_vars - set(types):
        t = resolve(Var(v), theta)
        if isinstance(t, Var) and t.name != v:
            renames[v] = t.name
        elif isinstance(t, Num):
            values[v] = t.value
        elif not isinstance(t, Var):
            raise _Prune()
    store = state.store
    if values or renames:
        rows = []
        for r in store.rows:
            r = r.assign(values)
            for old, new in renames.items():
                r = r.substitute(old, LinearForm.var(new))
            rows.append(r)
        store = alg.ConstraintSet.of(rows)
        if store.unsat:
            raise _Prune()
    merged: Dict[str, str] = {}
    for v, ty in new_types.items():
        merged[v] = _merge_type(merged.get(v), ty, v)
    used = frozenset((resolve(s, theta), resolve(i, theta)) for s, i in state.used)
    return _PathState(tuple(sorted(merged.items())), store, used)


def _restrict(theta: Dict[str, Term], goal_vars: Sequence[str]) -> Tuple[Tuple[str, Term], ...]:
    out = []
    for v in goal_vars:
        if v in theta:
            t = resolve(Var(v), theta)
            if t != Var(v):
                out.append((v, t))
    return tuple(out)


def _switch_density(program: Program, item: Msw) -> Tuple[SuccessFunction, Dict[str, str]]:
    """Density/mass of one switch draw plus the types it implies."""
    matches = program.instances(item.switch)
    if not matches:
        raise DerivationError(f"no declared switch matches {format_term(item.switch)}")
    out = item.outcome
    if isinstance(out, Compound) and not is_ground(out):
        raise DerivationError(f"msw outcome must be a variable or ground: {format_term(out)}")
    types: Dict[str, str] = {v: DISC for v in term_vars(item.switch)}
    if isinstance(out, Var):
        if any(isinstance(d, Gaussian) for _, d, _ in matches):
            types[out.name] = CONT
        elif all(d.numeric for _, d, _ in matches):
            types[out.name] = NUMD
        else:
            types[out.name] = DISC
    psi = alg.ZERO
    for s, dist, theta in matches:
        params = alg.ONE
        for v in ordered_vars([item.switch]):
            val = resolve(Var(v), theta)
            params = params * SuccessFunction.delta(v, to_value(val))
        if isinstance(out, Var):
            if isinstance(dist, Gaussian):
                part = SuccessFunction.gaussian(LinearForm.var(out.name), dist.mean, dist.variance)
            else:
                part = SuccessFunction.of(
                    alg.make_term(p, [alg.DeltaFactor(out.name, v)])
                    for v, p in zip(dist.values, dist.probs))
        else:
            value = to_value(out)
            if isinstance(dist, Gaussian):
                dens = alg.normal_pdf(value, dist.mean, dist.variance) if isinstance(value, float) else 0.0
                part = SuccessFunction.constant(dens) if dens > 0.0 else alg.ZERO
            else:
                p = dist.prob(value)
                part = SuccessFunction.constant(p) if p > 0.0 else alg.ZERO
        psi = psi + params * part
    return psi, types


def _bindings_of(item: Union[Unify, Constraint]) -> Optional[Dict[str, Term]]:
    return unify(item.lhs, item.rhs)


def _simple(t: Term) -> bool:
    return isinstance(t, (Var, Num))


class _Deriver:
    def __init__(self, program: Program, depth_limit: int):
        self.program = program
        self.depth_limit = depth_limit

    def expand(self, node: DerivationNode) -> None:
        item = node.goal[0]
        rest = node.goal[1:]
        d = node.depth + 1
        if isinstance(item, Call):
            node.kind = "PCR"
            self._pcr(node, item, rest, d)
        elif isinstance(item, Msw):
            node.kind = "MSW"
            self._msw(node, item, rest, d)
        elif isinstance(item, Constraint):
            self._constraint(node, item, rest, d)
        elif isinstance(item, Unify):
            node.kind = "ARITH"
            self._bind_step(node, unify(item.lhs, item.rhs), rest, d, "ARITH")
        elif isinstance(item, ArithEval):
            node.kind = "ARITH"
            value = Num(eval_arith_checked(item.expr))
            target = item.target
            if isinstance(target, Num):
                theta = {} if target.value == value.value else None
            else:
                theta = unify(target, value)
            self._bind_step(node, theta, rest, d, "ARITH")
        elif isinstance(item, Compare):
            node.kind = "ARITH"
            a = eval_arith_checked(item.lhs)
            b = eval_arith_checked(item.rhs)
            self._bind_step(node, {} if _COMPARE[item.op](a, b) else None, rest, d, "ARITH")
        else:  # pragma: no cover
            raise DerivationError(f"unknown goal item {item!r}")

    def _child(self, node, goal, d, step, state, info=None):
        child = DerivationNode(tuple(goal), d, step, state=state, info=info)
        node.children.append(child)
        return child

    def _bind_step(self, node, theta, rest, d, kind, clause_id=None, body=()):
        if theta is None:
            return
        try:
            state = _apply_bindings(node.state, theta)
        except _Prune:
            return
        goal = [map_item(i, lambda t: resolve(t, theta)) for i in list(body) + list(rest)]
        step = Step(kind, clause_id, _restrict(theta, node.goal_vars))
        self._child(node, goal, d, step, state)

    def _pcr(self, node, item: Call, rest, d):
        goal = item.goal
        name, arity = (goal.name, 0) if isinstance(goal, Atom) else (goal.functor, len(goal.args))
        clauses = self.program.clauses_for(name, arity)
        if not clauses and (name, arity) not in self.program.predicates:
            raise DerivationError(f"unknown predicate {name}/{arity}")
        for cid, clause in enumerate(clauses):
            cvars = ordered_vars([clause.head] + [t for i in clause.body for t in item_terms(i)])
            mapping = {v: f"_G{d}_{k + 1}" for k, v in enumerate(cvars)}
            head = rename(clause.head, mapping)
            theta = unify(goal, head)
            if theta is None:
                continue
            body = [map_item(i, lambda t: rename(t, mapping)) for i in clause.body]
            kind = "PCR" if clause.body else "FACT"
            self._bind_step(node, theta, rest, d, kind, cid, body)

    def _msw(self, node, item: Msw, rest, d):
        state = node.state
        if item.instance is not None:
            key = (item.switch, item.instance)
            if key in state.used:
                raise IndependenceViolation(
                    f"switch instance msw({format_term(item.switch)}, {format_term(item.instance)}, _) "
                    "is used twice on one derivation path")
            state = _PathState(state.types, state.store, state.used | {key})
        psi, types = _switch_density(self.program, item)
        if psi.is_zero:
            return
        state = _with_types(state, types)
        self._child(node, rest, d, Step("MSW"), state, info=psi)

    def _constraint(self, node, item: Constraint, rest, d):
        lhs, rhs = item.lhs, item.rhs
        if is_ground(lhs) and is_ground(rhs):
            node.kind = "ARITH"
            ok = abs(eval_arith_checked(lhs) - eval_arith_checked(rhs)) <= GROUND_EQ_TOL
            self._bind_step(node, {} if ok else None, rest, d, "ARITH")
            return
        types = node.state.type_map
        names = set(term_vars(lhs)) | set(term_vars(rhs))
        if _simple(lhs) and _simple(rhs) and not any(types.get(v) == CONT for v in names):
            node.kind = "ARITH"
            self._bind_step(node, unify(lhs, rhs), rest, d, "ARITH")
            return
        node.kind = "CONS"
        row = linearize(lhs) - linearize(rhs)
        state = _with_types(node.state, {v: CONT for v in names})
        store = alg.ConstraintSet.of(list(state.store.rows) + [row])
        if store.unsat:
            return
        state = _PathState(state.types, store, state.used)
        self._child(node, rest, d, Step("CONS"), state, info=row)


def eval_arith_checked(t: Term) -> float:
    if not is_ground(t):
        raise DerivationError(f"arithmetic on non-ground term {format_term(t)}")
    return eval_arith(t)


def derive(program: Program, query: Sequence[BodyItem], depth_limit: int = DEFAULT_DEPTH) -> DerivationNode:
    """Tree of all successful symbolic derivations of ``query``.

    Failed branches are removed; if nothing succeeds the root has no
    children and is not itself a success leaf.
    """
    if depth_limit < 1:
        raise ValueError("depth_limit must be at least 1")
    root = DerivationNode(tuple(query), 0)
    deriver = _Deriver(program, depth_limit)
    stack = [root]
    while stack:
        node = stack.pop()
        if not node.goal:
            continue
        if node.depth >= depth_limit:
            raise DepthLimitExceeded(depth_limit, node.format_goal())
        deriver.expand(node)
        stack.extend(reversed(node.children))
    _prune_failures(root)
    _annotate_variables(root)
    return root


def _post_order(root: DerivationNode):
    out = []
    stack = [(root, False)]
    while stack:
        n, done = stack.pop()
        if done:
            out.append(n)
            continue
        stack.append((n, True))
        stack.extend((c, False) for c in reversed(n.children))
    return out


def _prune_failures(root: DerivationNode) -> None:
    ok: Dict[int, bool] = {}
    for n in _post_order(root):
        n.children = [c for c in n.children if ok[id(c)]]
        ok[id(n)] = n.is_success or bool(n.children)
        if not n.children and not n.is_success:
            n.kind = "FAIL"


# ---------------------------------------------------------------- derivation variables

def _local_sets(node: DerivationNode) -> Tuple[set, set]:
    gvars = set(node.goal_vars)
    vc: set = set()
    vd: set = set()
    for child in node.children:
        cvc, cvd = set(child.vc), set(child.vd)
        if node.kind == "MSW":
            item: Msw = node.goal[0]
            ctypes = child.state.type_map
            vd |= set(term_vars(item.switch))
            if isinstance(item.outcome, Var):
                (vc if ctypes.get(item.outcome.name) == CONT else vd).add(item.outcome.name)
            vc |= cvc
            vd |= cvd
        elif node.kind == "CONS":
            vc |= set(child.info.vars) | cvc
            vd |= cvd
        else:
            mgu = dict(child.step.mgu)
            ctypes = child.state.type_map
            for x in gvars:
                t = mgu.get(x, Var(x))
                if isinstance(t, Var):
                    if t.name in cvc:
                        vc.add(x)
                    elif t.name in cvd:
                        vd.add(x)
                    elif ctypes.get(t.name) == CONT:
                        # aliased on this step; the path types it
                        vc.add(x)
                    elif t.name in ctypes:
                        vd.add(x)
                elif is_ground(t):
                    (vc if node.state.type_map.get(x) == CONT else vd).add(x)
    vc &= gvars
    vd = (vd & gvars) - vc
    return vc, vd


def derivation_variables(node: DerivationNode) -> Tuple[FrozenSet[str], FrozenSet[str]]:
    """(Vc, Vd) of a node whose children are already annotated."""
    vc, vd = _local_sets(node)
    return frozenset(vc), frozenset(vd)


def _annotate_variables(root: DerivationNode) -> None:
    for n in _post_order(root):
        n.vc, n.vd = derivation_variables(n)


# ---------------------------------------------------------------- success functions

def _bind_function(mgu: Sequence[Tuple[str, Term]], child_psi: SuccessFunction) -> SuccessFunction:
    psi = alg.ONE
    free = set(child_psi.vars)
    for v, t in mgu:
        if isinstance(t, Var):
            psi = psi * SuccessFunction.delta(v, VarRef(t.name))
        elif is_ground(t):
            psi = psi * SuccessFunction.delta(v, to_value(t))
        else:
            shared = set(term_vars(t)) & free
            if shared:
                raise DerivationError(
                    f"variable {v} is bound to {format_term(t)} whose variables "
                    f"{', '.join(sorted(shared))} carry probability mass")
    return psi


def _node_function(node: DerivationNode) -> SuccessFunction:
    if node.is_success:
        return alg.ONE
    if node.kind == "MSW":
        return alg.join(node.children[0].info, node.children[0].psi) if node.children else alg.ZERO
    if node.kind == "CONS":
        if not node.children:
            return alg.ZERO
        return alg.join(SuccessFunction.constraint([node.children[0].info]), node.children[0].psi)
    gvars = set(node.goal_vars)
    total = alg.ZERO
    for child in node.children:
        psi = alg.join(_bind_function(child.step.mgu, child.psi), child.psi)
        order = child.goal_vars + [v for v in psi.vars if v not in set(child.goal_vars)]
        drop = [v for v in order if v in set(psi.vars) and v not in gvars]
        total = total + alg.marginalize(psi, drop)
    return total


def success_function(program: Program, node: DerivationNode) -> SuccessFunction:
    """Success function of ``node``'s goal, computed bottom-up over its subtree."""
    for n in _post_order(node):
        if n.psi is None:
            n.psi = _node_function(n)
    return node.psi


# ---------------------------------------------------------------- queries

@dataclass(frozen=True)
class QueryResult:
    success_function: SuccessFunction
    derivation_count: int
    depth_reached: int
    query_vars: Tuple[str, ...] = ()
    tree: Optional[DerivationNode] = field(default=None, compare=False, repr=False)

    @property
    def is_zero(self) -> bool:
        return self.success_function.is_zero


def answer_query(program: Program, query: Union[str, Sequence[BodyItem]], normalize: bool = False,
                 depth_limit: int = DEFAULT_DEPTH) -> QueryResult:
    """Parse (if needed), derive, assemble, and optionally normalize an answer."""
    items = parse_query(query) if isinstance(query, str) else tuple(query)
    qvars = tuple(query_variables(items))
    tree = derive(program, items, depth_limit)
    psi = success_function(program, tree)
    hidden = [v for v in tree.goal_vars if v not in qvars and v in set(psi.vars)]
    if hidden:
        psi = alg.marginalize(psi, hidden)
    if normalize and not psi.is_zero:
        mass = alg.total_mass(psi)
        if not mass > 0.0:
            raise AlgebraError("cannot normalize a function with zero total mass")
        psi = psi.scale(1.0 / mass)
    leaves = [n for n in tree.walk() if n.is_success]
    depth = max((n.depth for n in tree.walk()), default=0)
    return QueryResult(psi, len(leaves), depth, qvars, tree)
