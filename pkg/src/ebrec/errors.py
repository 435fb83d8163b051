"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage errors exit 1,
IngestionError/ContractError exit 2, NumericalError exit 3.
"""


class EbrecError(Exception):
    """Base class for all package-specific errors."""


class IngestionError(EbrecError):
    """Raised when an input file is missing, malformed, or inconsistent."""


class ContractError(EbrecError):
    """Raised when a call violates an operation contract (shape, id range, ...)."""


class NumericalError(EbrecError):
    """Raised when a computation produces non-finite values."""
