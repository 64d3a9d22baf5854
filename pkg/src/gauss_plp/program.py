"""Reading extended-PRISM source: tokens -> terms -> clauses and switch tables.

Supported syntax is a small Prolog subset: facts and rules, ``msw/2`` and
``msw/3``, linear equalities written with ``=``, ``is/2``, arithmetic
comparisons, and the ``values`` / ``set_sw`` declarations (``set_sw`` may
give either a probability list or ``norm(Mean, Variance)``).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Tuple, Union

from .errors import ParseError, ProgramError
from .terms import (
    INFIX,
    LIST,
    Atom,
    Compound,
    Num,
    Term,
    Var,
    format_term,
    from_value,
    is_ground,
    to_value,
    unify,
)

PROB_TOL = 1e-9

COMPARE_OPS = ("<", ">", "=<", ">=", "=:=", "=\\=")
RESERVED_HEADS = {"msw", "values", "set_sw", "is", "=", "\\=", ",", ":-", "true", *COMPARE_OPS}


# ---------------------------------------------------------------- body items

@dataclass(frozen=True)
class Call:
    goal: Term


@dataclass(frozen=True)
class Msw:
    switch: Term
    instance: Optional[Term]
    outcome: Term
    site: int = 0  # textual call site, used for implicit instances of msw/2


@dataclass(frozen=True)
class Constraint:
    """``lhs = rhs`` where both sides are arithmetic over variables and numbers."""

    lhs: Term
    rhs: Term


@dataclass(frozen=True)
class ArithEval:
    target: Term
    expr: Term


@dataclass(frozen=True)
class Compare:
    op: str
    lhs: Term
    rhs: Term


@dataclass(frozen=True)
class Unify:
    lhs: Term
    rhs: Term


BodyItem = Union[Call, Msw, Constraint, ArithEval, Compare, Unify]


def item_terms(item: BodyItem) -> Tuple[Term, ...]:
    if isinstance(item, Call):
        return (item.goal,)
    if isinstance(item, Msw):
        if item.instance is None:
            return (item.switch, item.outcome)
        return (item.switch, item.instance, item.outcome)
    if isinstance(item, ArithEval):
        return (item.target, item.expr)
    return (item.lhs, item.rhs)


def map_item(item: BodyItem, fn) -> BodyItem:
    """Apply ``fn`` to every term inside ``item``."""
    if isinstance(item, Call):
        return Call(fn(item.goal))
    if isinstance(item, Msw):
        inst = None if item.instance is None else fn(item.instance)
        return Msw(fn(item.switch), inst, fn(item.outcome), item.site)
    if isinstance(item, ArithEval):
        return ArithEval(fn(item.target), fn(item.expr))
    if isinstance(item, Compare):
        return Compare(item.op, fn(item.lhs), fn(item.rhs))
    return type(item)(fn(item.lhs), fn(item.rhs))


def format_item(item: BodyItem) -> str:
    if isinstance(item, Call):
        return format_term(item.goal)
    if isinstance(item, Msw):
        return format_term(Compound("msw", item_terms(item)))
    if isinstance(item, ArithEval):
        return format_term(Compound("is", (item.target, item.expr)))
    if isinstance(item, Compare):
        return format_term(Compound(item.op, (item.lhs, item.rhs)))
    return format_term(Compound("=", (item.lhs, item.rhs)))


def format_goal(items) -> str:
    return ", ".join(format_item(i) for i in items) if items else "true"


# ---------------------------------------------------------------- program

@dataclass(frozen=True)
class Clause:
    head: Term
    body: Tuple[BodyItem, ...] = ()

    @property
    def key(self) -> Tuple[str, int]:
        if isinstance(self.head, Atom):
            return self.head.name, 0
        return self.head.functor, len(self.head.args)


@dataclass(frozen=True)
class Discrete:
    values: Tuple
    probs: Tuple[float, ...]

    def prob(self, value) -> float:
        for v, p in zip(self.values, self.probs):
            if v == value:
                return p
        return 0.0

    @property
    def numeric(self) -> bool:
        return all(isinstance(v, float) for v in self.values)


@dataclass(frozen=True)
class Gaussian:
    mean: float
    variance: float


Distribution = Union[Discrete, Gaussian]


@dataclass(frozen=True)
class Program:
    clauses: Tuple[Clause, ...]
    switches: Mapping[Term, Distribution]
    value_decls: Tuple[Tuple[Term, object], ...] = ()
    _index: Mapping = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        index: Dict[Tuple[str, int], List[Clause]] = {}
        for c in self.clauses:
            index.setdefault(c.key, []).append(c)
        object.__setattr__(self, "switches", MappingProxyType(dict(self.switches)))
        object.__setattr__(self, "_index", MappingProxyType({k: tuple(v) for k, v in index.items()}))

    def clauses_for(self, name: str, arity: int) -> Tuple[Clause, ...]:
        return self._index.get((name, arity), ())

    @property
    def predicates(self):
        return list(self._index)

    @property
    def facts(self) -> Tuple[Clause, ...]:
        return tuple(c for c in self.clauses if not c.body and is_ground(c.head))

    def instances(self, switch: Term):
        """Declared ground switches matching ``switch``, with the matching bindings."""
        if is_ground(switch):
            dist = self.switches.get(switch)
            return [(switch, dist, {})] if dist is not None else []
        out = []
        for s, dist in self.switches.items():
            theta = unify(switch, s)
            if theta is not None:
                out.append((s, dist, theta))
        return out

    @property
    def has_continuous(self) -> bool:
        return any(isinstance(d, Gaussian) for d in self.switches.values())

    @property
    def has_constraints(self) -> bool:
        return any(isinstance(i, Constraint) for c in self.clauses for i in c.body)


# ---------------------------------------------------------------- lexer

_SYMBOL_CHARS = set("+-*/\\^<>=~:.?@#&$")
_KNOWN_OPS = sorted([":-", "=:=", "=\\=", "\\=", "=<", ">=", "<", ">", "=", "+", "-", "*", "/"],
                    key=len, reverse=True)
_NUM_RE = re.compile(r"\d+(\.\d+)?([eE][+-]?\d+)?")


@dataclass
class Token:
    kind: str  # var atom num punct op end eof
    text: str
    line: int
    col: int
    ws_before: bool = False
    value: object = None


def tokenize(source: str) -> List[Token]:
    toks: List[Token] = []
    i, line, col = 0, 1, 1
    n = len(source)
    ws = True

    def adv(k: int):
        nonlocal i, line, col
        for _ in range(k):
            if source[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        c = source[i]
        if c.isspace():
            adv(1)
            ws = True
            continue
        if c == "%":
            while i < n and source[i] != "\n":
                adv(1)
            ws = True
            continue
        start_line, start_col = line, col
        if c.isdigit():
            m = _NUM_RE.match(source, i)
            text = m.group(0)
            toks.append(Token("num", text, start_line, start_col, ws, float(text)))
            adv(len(text))
        elif c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            text = source[i:j]
            kind = "var" if (c.isupper() or c == "_") else "atom"
            toks.append(Token(kind, text, start_line, start_col, ws, text))
            adv(j - i)
        elif c == "'":
            j = i + 1
            buf = []
            while True:
                if j >= n:
                    raise ParseError("unterminated quoted atom", start_line, start_col)
                if source[j] == "\\" and j + 1 < n:
                    buf.append(source[j + 1])
                    j += 2
                    continue
                if source[j] == "'":
                    if j + 1 < n and source[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    break
                buf.append(source[j])
                j += 1
            toks.append(Token("atom", source[i:j + 1], start_line, start_col, ws, "".join(buf)))
            adv(j + 1 - i)
        elif c in "()[],|":
            toks.append(Token("punct", c, start_line, start_col, ws, c))
            adv(1)
        elif c == "." and (i + 1 >= n or source[i + 1].isspace() or source[i + 1] == "%"):
            toks.append(Token("end", ".", start_line, start_col, ws, "."))
            adv(1)
        elif c in _SYMBOL_CHARS:
            for op in _KNOWN_OPS:
                if source.startswith(op, i):
                    break
            else:
                raise ParseError(f"unknown operator starting with {c!r}", start_line, start_col)
            toks.append(Token("op", op, start_line, start_col, ws, op))
            adv(len(op))
        else:
            raise ParseError(f"unexpected character {c!r}", start_line, start_col)
        ws = False
    toks.append(Token("eof", "", line, col, True))
    return toks


# ---------------------------------------------------------------- parser

class _Parser:
    def __init__(self, source: str):
        self.toks = tokenize(source)
        self.pos = 0
        self.anon = 0

    def peek(self) -> Token:
        return self.toks[self.pos]

    def next(self) -> Token:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def error(self, msg: str, tok: Optional[Token] = None):
        tok = tok or self.peek()
        return ParseError(msg, tok.line, tok.col)

    def expect(self, kind: str, text: Optional[str] = None) -> Token:
        t = self.next()
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            got = t.text or t.kind
            raise ParseError(f"expected {want!r}, found {got!r}", t.line, t.col)
        return t

    def _infix_name(self, tok: Token) -> Optional[str]:
        if tok.kind == "op" and tok.text in INFIX:
            return tok.text
        if tok.kind == "punct" and tok.text == ",":
            return ","
        if tok.kind == "atom" and tok.text == "is":
            return "is"
        return None

    def expr(self, max_prec: int) -> Tuple[Term, int]:
        left, left_prec = self.prefix(max_prec)
        while True:
            name = self._infix_name(self.peek())
            if name is None:
                break
            p, kind = INFIX[name]
            if p > max_prec:
                break
            lmax = p if kind == "yfx" else p - 1
            if left_prec > lmax:
                break
            rmax = p if kind == "xfy" else p - 1
            self.next()
            right, _ = self.expr(rmax)
            left, left_prec = Compound(name, (left, right)), p
        return left, left_prec

    def prefix(self, max_prec: int) -> Tuple[Term, int]:
        tok = self.next()
        if tok.kind == "num":
            return Num(tok.value), 0
        if tok.kind == "var":
            if tok.text == "_":
                self.anon += 1
                return Var(f"_Anon{self.anon}"), 0
            return Var(tok.text), 0
        if tok.kind == "op" and tok.text == "-":
            nxt = self.peek()
            if nxt.kind == "num" and not nxt.ws_before:
                self.next()
                return Num(-nxt.value), 0
            arg, _ = self.expr(200)
            if isinstance(arg, Num):
                return Num(-arg.value), 0
            return Compound("-", (arg,)), 200
        if tok.kind == "op" and tok.text == ":-":
            if max_prec < 1200:
                raise self.error("unexpected ':-'", tok)
            body, _ = self.expr(1199)
            return Compound(":-", (body,)), 1200
        if tok.kind == "punct" and tok.text == "(":
            t, _ = self.expr(1200)
            self.expect("punct", ")")
            return t, 0
        if tok.kind == "punct" and tok.text == "[":
            items: List[Term] = []
            if self.peek().text != "]":
                while True:
                    t, _ = self.expr(999)
                    items.append(t)
                    if self.peek().kind == "punct" and self.peek().text == ",":
                        self.next()
                        continue
                    break
            if self.peek().text == "|":
                raise self.error("list tails are not supported")
            self.expect("punct", "]")
            return Compound(LIST, tuple(items)), 0
        if tok.kind == "atom" or (tok.kind == "op" and tok.text not in (":-",)):
            name = tok.value if tok.kind == "atom" else tok.text
            nxt = self.peek()
            if nxt.kind == "punct" and nxt.text == "(" and not nxt.ws_before:
                self.next()
                args: List[Term] = []
                while True:
                    t, _ = self.expr(999)
                    args.append(t)
                    if self.peek().kind == "punct" and self.peek().text == ",":
                        self.next()
                        continue
                    break
                self.expect("punct", ")")
                return Compound(name, tuple(args)), 0
            if tok.kind == "op":
                raise self.error(f"unexpected operator {tok.text!r}", tok)
            return Atom(name), 0
        raise self.error(f"unexpected {tok.text or tok.kind!r}", tok)

    def sentences(self):
        while self.peek().kind != "eof":
            self.anon = 0
            start = self.peek()
            t, _ = self.expr(1200)
            if self.peek().kind != "end":
                raise self.error(f"expected '.' after term, found {self.peek().text or self.peek().kind!r}")
            self.next()
            yield t, start


# ---------------------------------------------------------------- classification

_ARITH_FUNCTORS = {"+", "-", "*", "/"}


def is_arith(t: Term) -> bool:
    if isinstance(t, (Var, Num)):
        return True
    if isinstance(t, Compound) and t.functor in _ARITH_FUNCTORS and len(t.args) in (1, 2):
        if len(t.args) == 1 and t.functor != "-":
            return False
        return all(is_arith(a) for a in t.args)
    return False


def _flatten_conj(t: Term) -> List[Term]:
    out = []
    stack = [t]
    while stack:
        x = stack.pop()
        if isinstance(x, Compound) and x.functor == "," and len(x.args) == 2:
            stack.append(x.args[1])
            stack.append(x.args[0])
        else:
            out.append(x)
    return out


class _SiteCounter:
    def __init__(self, start: int = 0):
        self.n = start

    def __call__(self) -> int:
        self.n += 1
        return self.n


def _check_no_list(t: Term, where: str, tok: Token):
    stack = [t]
    while stack:
        x = stack.pop()
        if isinstance(x, Compound):
            if x.functor == LIST:
                raise ParseError(f"list literals are only allowed in declarations ({where})", tok.line, tok.col)
            stack.extend(x.args)


def to_body_item(t: Term, sites: _SiteCounter, tok: Token) -> Optional[BodyItem]:
    _check_no_list(t, "clause body", tok)
    if isinstance(t, Var):
        raise ParseError(f"variable {t.name} used as a goal", tok.line, tok.col)
    if isinstance(t, Num):
        raise ParseError("number used as a goal", tok.line, tok.col)
    if isinstance(t, Atom):
        if t.name == "true":
            return None
        return Call(t)
    f, args = t.functor, t.args
    if f == "msw" and len(args) == 2:
        return Msw(args[0], None, args[1], sites())
    if f == "msw" and len(args) == 3:
        return Msw(args[0], args[1], args[2], sites())
    if f == "is" and len(args) == 2:
        return ArithEval(args[0], args[1])
    if f in COMPARE_OPS and len(args) == 2:
        return Compare(f, args[0], args[1])
    if f == "=" and len(args) == 2:
        if is_arith(args[0]) and is_arith(args[1]):
            return Constraint(args[0], args[1])
        return Unify(args[0], args[1])
    if f == "\\=":
        raise ParseError("disequality constraints are not supported", tok.line, tok.col)
    if f in ("values", "set_sw"):
        raise ParseError(f"{f}/{len(args)} may only appear as a declaration", tok.line, tok.col)
    return Call(t)


def parse_body(t: Term, sites: _SiteCounter, tok: Token) -> Tuple[BodyItem, ...]:
    items = []
    for g in _flatten_conj(t):
        item = to_body_item(g, sites, tok)
        if item is not None:
            items.append(item)
    return tuple(items)


# ---------------------------------------------------------------- declarations

def _number(t: Term, what: str) -> float:
    if isinstance(t, Num):
        return t.value
    raise ProgramError(f"{what} must be a number, got {format_term(t)}")


def _parse_dist(t: Term):
    if isinstance(t, Compound) and t.functor == "norm" and len(t.args) == 2:
        return ("norm", _number(t.args[0], "norm mean"), _number(t.args[1], "norm variance"))
    if isinstance(t, Compound) and t.functor == LIST:
        return ("list", tuple(_number(a, "probability") for a in t.args))
    raise ProgramError(f"unknown distribution {format_term(t)}")


def _parse_valspec(t: Term):
    if t == Atom("real"):
        return "real"
    if isinstance(t, Compound) and t.functor == LIST and t.args:
        vals = []
        for a in t.args:
            if not is_ground(a):
                raise ProgramError(f"switch values must be ground: {format_term(a)}")
            vals.append(to_value(a))
        return tuple(vals)
    raise ProgramError(f"bad values specification {format_term(t)}")


def _build_switches(value_decls, set_sws) -> Dict[Term, Distribution]:
    switches: Dict[Term, Distribution] = {}

    def decl_for(s: Term):
        for pat, domain in value_decls:
            if unify(pat, s) is not None:
                return domain
        return None

    for s, (kind, *params) in set_sws:
        domain = decl_for(s)
        name = format_term(s)
        if kind == "norm":
            mean, var = params
            if domain is not None and domain != "real":
                raise ProgramError(f"switch {name} has discrete values but set_sw gives norm/2")
            if not (var > 0 and math.isfinite(var)):
                raise ProgramError(f"switch {name}: variance must be positive, got {var:.12g}")
            if not math.isfinite(mean):
                raise ProgramError(f"switch {name}: mean must be finite")
            switches[s] = Gaussian(float(mean), float(var))
        else:
            probs = params[0]
            if domain is None:
                raise ProgramError(f"switch {name} has no values declaration")
            if domain == "real":
                raise ProgramError(f"switch {name} is declared real but set_sw gives probabilities")
            if len(probs) != len(domain):
                raise ProgramError(
                    f"switch {name}: {len(probs)} probabilities for {len(domain)} values")
            if any(p < 0 or p > 1 for p in probs):
                raise ProgramError(f"switch {name}: probabilities must lie in [0, 1]")
            total = math.fsum(probs)
            if abs(total - 1.0) > PROB_TOL:
                raise ProgramError(f"switch {name}: probabilities sum to {total:.12g}, not 1")
            switches[s] = Discrete(tuple(domain), tuple(float(p) for p in probs))

    for pat, domain in value_decls:
        if not is_ground(pat) or pat in switches:
            continue
        if domain == "real":
            raise ProgramError(f"continuous switch {format_term(pat)} has no set_sw density")
        k = len(domain)
        switches[pat] = Discrete(tuple(domain), tuple(1.0 / k for _ in domain))
    return switches


def _check_msw_refs(clauses, program: Program):
    for c in clauses:
        for item in c.body:
            if isinstance(item, Msw) and not program.instances(item.switch):
                raise ProgramError(
                    f"msw switch {format_term(item.switch)} in clause for "
                    f"{c.key[0]}/{c.key[1]} has no declared instance")


def parse_program(source: str) -> Program:
    """Parse and validate program text."""
    parser = _Parser(source)
    sites = _SiteCounter()
    clauses: List[Clause] = []
    value_decls: List[Tuple[Term, object]] = []
    set_sws: List[Tuple[Term, tuple]] = []
    seen_sw = set()

    def declare(d: Term, tok: Token):
        if isinstance(d, Compound) and d.functor == "values" and len(d.args) == 2:
            domain = _parse_valspec(d.args[1])
            for pat, old in value_decls:
                if pat == d.args[0]:
                    if old != domain:
                        raise ProgramError(f"conflicting values declarations for {format_term(pat)}")
                    return
            value_decls.append((d.args[0], domain))
        elif isinstance(d, Compound) and d.functor == "set_sw" and len(d.args) == 2:
            s = d.args[0]
            if not is_ground(s):
                raise ProgramError(f"set_sw switch must be ground: {format_term(s)}")
            if s in seen_sw:
                raise ProgramError(f"duplicate set_sw for switch {format_term(s)}")
            seen_sw.add(s)
            set_sws.append((s, _parse_dist(d.args[1])))
        else:
            raise ProgramError(f"unknown directive {format_term(d)} (line {tok.line})")

    for t, tok in parser.sentences():
        if isinstance(t, Compound) and t.functor == ":-" and len(t.args) == 1:
            for d in _flatten_conj(t.args[0]):
                declare(d, tok)
            continue
        if isinstance(t, Compound) and t.functor == "values" and len(t.args) == 2:
            declare(t, tok)
            continue
        if isinstance(t, Compound) and t.functor == ":-" and len(t.args) == 2:
            head, body = t.args
            items = parse_body(body, sites, tok)
        else:
            head, items = t, ()
        if not isinstance(head, (Atom, Compound)):
            raise ParseError(f"clause head must be an atom or compound, got {format_term(head)}",
                             tok.line, tok.col)
        name = head.name if isinstance(head, Atom) else head.functor
        if name in RESERVED_HEADS or name == LIST:
            raise ParseError(f"cannot define built-in predicate {name}", tok.line, tok.col)
        _check_no_list(head, "clause head", tok)
        clauses.append(Clause(head, items))

    program = Program(tuple(clauses), _build_switches(value_decls, set_sws), tuple(value_decls))
    _check_msw_refs(clauses, program)
    return program


def parse_query(source: str) -> Tuple[BodyItem, ...]:
    """Parse ``goal, goal, ... .`` into body items; ``true.`` is the empty goal."""
    parser = _Parser(source)
    sentences = list(parser.sentences())
    if len(sentences) != 1:
        raise ParseError(f"expected exactly one query, found {len(sentences)}")
    t, tok = sentences[0]
    if isinstance(t, Compound) and t.functor == ":-":
        raise ParseError("a query cannot be a clause or directive", tok.line, tok.col)
    # query call sites are numbered apart from program sites
    return parse_body(t, _SiteCounter(-(10 ** 9)), tok)


def query_variables(items) -> List[str]:
    """Named variables of a query in textual order (anonymous ones skipped)."""
    from .terms import ordered_vars
    terms = [t for i in items for t in item_terms(i)]
    return [v for v in ordered_vars(terms) if not v.startswith("_")]


# ---------------------------------------------------------------- printing

def _format_dist(d: Distribution) -> str:
    if isinstance(d, Gaussian):
        return f"norm({Num(d.mean)}, {Num(d.variance)})"
    return "[" + ", ".join(str(Num(p)) for p in d.probs) + "]"


def format_program(program: Program) -> str:
    """Source text that parses back to an equal Program."""
    lines = []
    declared = []
    for pat, domain in program.value_decls:
        if domain == "real":
            lines.append(f"values({format_term(pat)}, real).")
        else:
            vals = ", ".join(format_term(from_value(v)) for v in domain)
            lines.append(f"values({format_term(pat)}, [{vals}]).")
        declared.append(pat)
    for s, d in program.switches.items():
        if isinstance(d, Discrete) and not any(unify(p, s) is not None for p in declared):
            vals = ", ".join(format_term(from_value(v)) for v in d.values)
            lines.append(f"values({format_term(s)}, [{vals}]).")
        lines.append(f":- set_sw({format_term(s)}, {_format_dist(d)}).")
    for c in program.clauses:
        head = format_term(c.head)
        if c.body:
            lines.append(f"{head} :- {format_goal(c.body)}.")
        else:
            lines.append(f"{head}.")
    return "\n".join(lines) + "\n"
