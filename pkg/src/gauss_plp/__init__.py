"""Exact inference for logic programs with discrete and Gaussian switches."""

from importlib import resources

from .algebra import (
    ONE,
    ZERO,
    ConstrainedTerm,
    ConstraintSet,
    DeltaFactor,
    GaussianFactor,
    LinearForm,
    PPDFTerm,
    SuccessFunction,
    VarRef,
    evaluate,
    integrate_out,
    join,
    marginalize,
    marginalize_discrete,
    normalize,
    project,
    simplify,
)
from .engine import QueryResult, answer_query, derivation_variables, derive, success_function, unify
from .errors import (
    AlgebraError,
    DepthLimitExceeded,
    DerivationError,
    GaussPLPError,
    IndependenceViolation,
    OracleError,
    ParseError,
    ProgramError,
)
from .program import Program, format_program, parse_program, parse_query


def library_source(name: str) -> str:
    """Text of a bundled example program, e.g. ``library_source("mixture")``."""
    return resources.files(__package__).joinpath("library", f"{name}.pl").read_text(encoding="utf-8")


def library_path(name: str) -> str:
    return str(resources.files(__package__).joinpath("library", f"{name}.pl"))
