"""Prolog-style terms, substitutions and unification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, Optional, Tuple, Union


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Atom:
    name: str

    def __str__(self) -> str:
        return format_term(self)


@dataclass(frozen=True)
class Num:
    value: float

    def __str__(self) -> str:
        return format_number(self.value)


@dataclass(frozen=True)
class Compound:
    functor: str
    args: Tuple["Term", ...]

    @property
    def arity(self) -> int:
        return len(self.args)

    def __str__(self) -> str:
        return format_term(self)


Term = Union[Var, Atom, Num, Compound]
Subst = Dict[str, Term]

# functor used for list literals inside directives
LIST = "[]"

INFIX = {
    ":-": (1200, "xfx"),
    ",": (1000, "xfy"),
    "=": (700, "xfx"),
    "\\=": (700, "xfx"),
    "is": (700, "xfx"),
    "<": (700, "xfx"),
    ">": (700, "xfx"),
    "=<": (700, "xfx"),
    ">=": (700, "xfx"),
    "=:=": (700, "xfx"),
    "=\\=": (700, "xfx"),
    "+": (500, "yfx"),
    "-": (500, "yfx"),
    "*": (400, "yfx"),
    "/": (400, "yfx"),
}


def functor_of(t: Term) -> Tuple[str, int]:
    if isinstance(t, Compound):
        return t.functor, len(t.args)
    if isinstance(t, Atom):
        return t.name, 0
    raise TypeError(f"not a callable term: {format_term(t)}")


def term_vars(t: Term) -> Iterator[str]:
    """Yield variable names of ``t`` in left-to-right order (with repeats)."""
    stack = [t]
    while stack:
        x = stack.pop()
        if isinstance(x, Var):
            yield x.name
        elif isinstance(x, Compound):
            stack.extend(reversed(x.args))


def ordered_vars(terms: Iterable[Term]) -> list:
    seen: Dict[str, None] = {}
    for t in terms:
        for v in term_vars(t):
            seen.setdefault(v, None)
    return list(seen)


def is_ground(t: Term) -> bool:
    return next(term_vars(t), None) is None


def walk(t: Term, s: Subst) -> Term:
    while isinstance(t, Var) and t.name in s:
        t = s[t.name]
    return t


def resolve(t: Term, s: Subst) -> Term:
    """Apply ``s`` to ``t`` all the way down."""
    t = walk(t, s)
    if isinstance(t, Compound):
        return Compound(t.functor, tuple(resolve(a, s) for a in t.args))
    return t


def rename(t: Term, mapping: Dict[str, str]) -> Term:
    if isinstance(t, Var):
        return Var(mapping.get(t.name, t.name))
    if isinstance(t, Compound):
        return Compound(t.functor, tuple(rename(a, mapping) for a in t.args))
    return t


def _occurs(name: str, t: Term, s: Subst) -> bool:
    stack = [t]
    while stack:
        x = walk(stack.pop(), s)
        if isinstance(x, Var):
            if x.name == name:
                return True
        elif isinstance(x, Compound):
            stack.extend(x.args)
    return False


def num_equal(a: float, b: float, tol: float = 0.0) -> bool:
    return a == b or abs(a - b) <= tol


def unify(t1: Term, t2: Term, s: Optional[Subst] = None,
          num_tol: float = 0.0) -> Optional[Subst]:
    """Most general unifier extending ``s``, or None.

    Occurs check is always on. When two unbound variables meet, the one
    coming from ``t2`` is bound to the one from ``t1``; resolution passes
    the renamed clause head as ``t2`` so clause variables get bound to goal
    terms and goal variables keep their names.
    """
    s = dict(s) if s else {}
    stack = [(t1, t2)]
    while stack:
        a, b = stack.pop()
        a = walk(a, s)
        b = walk(b, s)
        if isinstance(a, Var) and isinstance(b, Var):
            if a.name != b.name:
                s[b.name] = a
        elif isinstance(b, Var):
            if _occurs(b.name, a, s):
                return None
            s[b.name] = a
        elif isinstance(a, Var):
            if _occurs(a.name, b, s):
                return None
            s[a.name] = b
        elif isinstance(a, Num) and isinstance(b, Num):
            if not num_equal(a.value, b.value, num_tol):
                return None
        elif isinstance(a, Compound) and isinstance(b, Compound):
            if a.functor != b.functor or len(a.args) != len(b.args):
                return None
            stack.extend(zip(a.args, b.args))
        elif a != b:
            return None
    return s


def format_number(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return f"{x:.1f}"
    return repr(x)


def _atom_text(name: str) -> str:
    if name and (name[0].islower() and (name.replace("_", "a").isalnum())):
        return name
    if name in ("[]",):
        return name
    return "'" + name.replace("\\", "\\\\").replace("'", "\\'") + "'"


def format_term(t: Term, prec: int = 999) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Num):
        return format_number(t.value)
    if isinstance(t, Atom):
        return _atom_text(t.name)
    if t.functor == LIST:
        return "[" + ", ".join(format_term(a) for a in t.args) + "]"
    if len(t.args) == 2 and t.functor in INFIX:
        p, kind = INFIX[t.functor]
        lp = p if kind == "yfx" else p - 1
        rp = p if kind == "xfy" else p - 1
        left = format_term(t.args[0], lp)
        right = format_term(t.args[1], rp)
        sep = ", " if t.functor == "," else f" {t.functor} "
        text = f"{left}{sep}{right}"
        return f"({text})" if p > prec else text
    if len(t.args) == 1 and t.functor == "-":
        text = "-" + format_term(t.args[0], 200)
        return f"({text})" if 200 > prec else text
    return _atom_text(t.functor) + "(" + ", ".join(format_term(a) for a in t.args) + ")"


def to_value(t: Term):
    """Ground term -> plain value used in delta factors (float, str or Compound)."""
    if isinstance(t, Num):
        return float(t.value)
    if isinstance(t, Atom):
        return t.name
    if isinstance(t, Compound) and is_ground(t):
        return t
    raise ValueError(f"not a ground value: {format_term(t)}")


def from_value(v) -> Term:
    if isinstance(v, bool):
        raise TypeError("booleans are not term values")
    if isinstance(v, (int, float)):
        return Num(float(v))
    if isinstance(v, str):
        return Atom(v)
    if isinstance(v, (Var, Atom, Num, Compound)):
        return v
    raise TypeError(f"cannot convert {v!r} to a term")


def format_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.12g}"
    if isinstance(v, str):
        return _atom_text(v)
    return format_term(v)
