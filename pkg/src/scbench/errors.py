"""Exception types. The CLI maps these onto exit codes 2 and 3."""


class ScbenchError(Exception):
    """Base class for all package errors."""


class ValidationError(ScbenchError, ValueError):
    """Malformed input: bad files, configs, shapes or parameters."""


class NumericalError(ScbenchError, ArithmeticError):
    """A numerical procedure failed (singular system, failed factorization, ...)."""
