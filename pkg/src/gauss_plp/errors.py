class GaussPLPError(Exception):
    """Base class; ``phase`` tags where the failure happened."""

    phase = "error"

    def __str__(self) -> str:
        return f"[{self.phase}] {super().__str__()}"


class ParseError(GaussPLPError):
    phase = "parse"

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        loc = f"line {line}, column {col}: " if line else ""
        super().__init__(loc + message)


class ProgramError(GaussPLPError):
    phase = "validate"


class AlgebraError(GaussPLPError):
    phase = "algebra"


class DerivationError(GaussPLPError):
    phase = "derive"


class DepthLimitExceeded(DerivationError):
    def __init__(self, limit: int, goal: str):
        self.limit = limit
        self.goal = goal
        super().__init__(f"depth limit {limit} exceeded at goal: {goal}")


class IndependenceViolation(DerivationError):
    """The same (switch, instance) pair was used twice on one derivation path."""


class OracleError(GaussPLPError):
    phase = "oracle"
