"""Exception hierarchy for qsdlab."""


class QsdLabError(Exception):
    """Base class for all qsdlab errors."""


class InvalidBasisError(QsdLabError):
    """Raised when a Fock basis is too small or otherwise malformed."""


class DimensionMismatchError(QsdLabError):
    """Raised when operators/states over different bases are combined."""


class StateError(QsdLabError):
    """Raised for degenerate or non-normalized state vectors."""


class ParameterError(QsdLabError):
    """Raised for invalid numerical parameters (e.g. dt <= 0)."""


class InstabilityError(QsdLabError):
    """Raised when an integrator produces non-finite amplitudes."""


class TruncationError(QsdLabError):
    """Raised when a basis is too small to represent the dynamics."""


class TruncationGrowthLimitError(TruncationError):
    """Raised when adaptive truncation would exceed the configured maximum."""


class ClosureBreakdownError(QsdLabError):
    """Raised when the Gaussian moment closure produces non-positive variances."""


class ConfigError(QsdLabError):
    """Raised for invalid run configurations; carries a line number if known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
