"""Exception types shared across the package."""


class ScatgenError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ScatgenError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ParameterError(ScatgenError, ValueError):
    """An argument is outside the operation's documented domain."""


class NumericDomainError(ScatgenError, ArithmeticError):
    """An operation produced non-finite values (log/div/exp overflow)."""


class ContractError(ScatgenError, RuntimeError):
    """An API contract was violated (e.g. backward on a non-scalar)."""


class FormatError(ScatgenError, ValueError):
    """A file does not conform to its declared binary or text format."""


class DependencyError(ScatgenError, RuntimeError):
    """A pipeline stage is missing an upstream artifact."""


class DegenerateSampleError(ScatgenError, ValueError):
    """A statistical routine received a sample it cannot test (zero variance)."""
