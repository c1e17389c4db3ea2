"""Exception types shared across the toolkit."""


class GensolvError(Exception):
    """Base class for all toolkit errors."""


class GridMismatch(GensolvError):
    """Operands live on different epsilon grids or torus grids."""


class DimensionMismatch(GensolvError):
    """Multi-index or point dimension does not match the symbol dimension."""


class NotInvertible(GensolvError):
    """Net fails the strictly-nonzero floor required for inversion."""


class BadT(GensolvError):
    """Scaled weight requested with t < 1."""


class DegenerateSymbol(GensolvError):
    """Weight function vanishes identically for some epsilon."""


class WeightVanishes(GensolvError):
    """Reference weight hits the zero floor at a sample point."""


class DeltaTooLarge(GensolvError):
    """Cutoff support does not fit inside the torus."""


class NoViableShift(GensolvError):
    """Every candidate frequency shift leaves the symbol below floor."""


class NoContraction(GensolvError):
    """No neighborhood radius on the ladder yields contraction factor <= 1/2."""


class Diverged(GensolvError):
    """Fixed-point iteration stalled without meeting its tolerance."""


class ProfileFails(GensolvError):
    """A hypoellipticity profile condition is violated; carries a witness."""

    def __init__(self, message, condition=None, witness=None):
        super().__init__(message)
        self.condition = condition
        self.witness = witness


class RemainderNotSmoothing(GensolvError):
    """Weighted remainder sup grows with lattice radius."""


class AdjointDegenerate(GensolvError):
    """Adjoint annihilates a test function, so the lower bound is infinite."""


class IllConditioned(GensolvError):
    """Gram system condition number exceeds the configured cap."""

    def __init__(self, message, condition_number=None, margin=None):
        super().__init__(message)
        self.condition_number = condition_number
        self.margin = margin


class WrongShape(GensolvError):
    """Operator does not have the shape required by a decomposition."""


class ParseError(GensolvError):
    """Scenario or expression text failed to parse; carries a position."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class TaskError(GensolvError):
    """A scenario task failed; wraps the module error with task context."""

    def __init__(self, task, cause):
        super().__init__(f"task {task!r} failed: {cause}")
        self.task = task
        self.cause = cause
