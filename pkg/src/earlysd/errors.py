"""Exception hierarchy shared across the package.

ConfigError maps to CLI exit code 2; everything else under EarlySdError
maps to exit code 3.
"""


class EarlySdError(Exception):
    """Base class for all package errors."""


class ConfigError(EarlySdError):
    """Invalid or infeasible configuration."""


class ValidationError(EarlySdError):
    """Graph or record construction violated an invariant."""


class ParseError(EarlySdError):
    """Malformed dataset file."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + loc)
        self.path = path
        self.line = line


class GraphLookupError(EarlySdError):
    """Unknown node or edge referenced."""


class DomainError(EarlySdError):
    """Argument outside an operation's stated domain."""


class NumericError(EarlySdError):
    """NaN / degenerate numeric input where finite values are required."""


class ShapeError(EarlySdError):
    """Array shape mismatch in the numeric core."""


class CalibrationError(EarlySdError):
    """Divergence calibration search failed to reach tolerance."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class TrainingError(EarlySdError):
    """Training diverged or could not start."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class EnhancerError(EarlySdError):
    """Text-intelligence backend misuse or failure."""


class ProtocolError(EnhancerError):
    """Malformed reply from the remote text-intelligence endpoint."""


class AugmentError(EarlySdError):
    """Structural augmentation precondition failure."""
