"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SsloraError(Exception):
    """Base class for all package errors."""


class ContractError(SsloraError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class ConfigurationError(SsloraError, ValueError):
    """A configuration cannot be realised (e.g. an empty left null space)."""


class DegenerateInputError(SsloraError, ValueError):
    """Input has no usable content, e.g. an all-zero singular spectrum."""


class NumericalError(SsloraError, ArithmeticError):
    """A numerical routine failed (non-convergence, NaN loss, divergence).

    Attributes:
        iterations: Iteration count reached before failure, when known.
        checkpoint: Path of the last good checkpoint, when one exists.
    """

    def __init__(self, message: str, iterations: int | None = None,
                 checkpoint: str | None = None):
        super().__init__(message)
        self.iterations = iterations
        self.checkpoint = checkpoint
