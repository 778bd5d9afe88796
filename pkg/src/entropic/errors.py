"""Exception hierarchy shared by the library and the command line.

Each leaf carries an ``exit_code`` so the CLI can map failures onto
documented process exit statuses without inspecting messages.
"""

from __future__ import annotations


class EntropicError(Exception):
    exit_code = 1


# expression language

class ExpressionError(EntropicError, ValueError):
    exit_code = 5


class PotentialSyntaxError(ExpressionError):
    def __init__(self, message: str, source: str, position: int, expected=()):
        self.source = source
        self.position = position
        self.expected = tuple(expected)
        pointer = f"{source}\n{' ' * position}^"
        hint = f" (expected {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at position {position}{hint}\n{pointer}")


class UnknownSymbol(ExpressionError):
    pass


class ArityError(ExpressionError):
    pass


class DomainError(ExpressionError, ArithmeticError):
    def __init__(self, message: str, subexpression: str = ""):
        self.subexpression = subexpression
        suffix = f" in '{subexpression}'" if subexpression else ""
        super().__init__(message + suffix)


# model construction

class ModelError(EntropicError, ValueError):
    exit_code = 2


class UnknownCatalogName(ModelError):
    pass


class InvalidGrid(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


# sample ingestion

class SampleError(EntropicError, ValueError):
    exit_code = 2


class FrequencySumError(SampleError):
    pass


class UnmatchedSupportPoint(SampleError):
    pass


class EmptySample(SampleError):
    pass


# solvers

class SolverError(EntropicError):
    exit_code = 3

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class NonConvergence(SolverError):
    exit_code = 3


class InfeasibleMoments(SolverError):
    exit_code = 4


class InnerInfeasible(InfeasibleMoments):
    exit_code = 4


class WrongTask(SolverError):
    """A solver was handed a model of the wrong form (simple vs general)."""

    exit_code = 2


# configuration

class ConfigError(EntropicError, ValueError):
    exit_code = 2

    def __init__(self, message: str, path: str = "", field: str = ""):
        self.path = path
        self.field = field
        where = ":".join(s for s in (path, field) if s)
        super().__init__(f"{where}: {message}" if where else message)
