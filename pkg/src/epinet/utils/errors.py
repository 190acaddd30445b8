"""
Error Types Module

Exception hierarchy shared by every epinet module. Each class carries the
process exit code the command-line front end reports for it.
"""


class EpinetError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ModelValidationError(EpinetError, ValueError):
    """Invalid input: parse failure, schema problem or violated precondition."""

    exit_code = 1


class NumericalError(EpinetError, ArithmeticError):
    """A numerical routine failed (singular system, solver failure, step underflow)."""

    exit_code = 2


class ConvergenceError(NumericalError):
    """An iteration stopped before reaching its tolerance.

    Attributes:
        last: Last (or best) iterate reached
        gap: Residual or step size at that iterate
        iterations: Number of iterations performed
    """

    def __init__(self, message, last=None, gap=None, iterations=None):
        super().__init__(message)
        self.last = last
        self.gap = gap
        self.iterations = iterations


class InconclusiveError(EpinetError):
    """A statistical experiment could not reach a verdict."""

    exit_code = 3
