"""
Exception hierarchy for the CDN placement simulator.
"""


class CdnSimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(CdnSimError):
    """Invalid configuration, manifest or model constants."""


class ParameterError(CdnSimError, ValueError):
    """Invalid argument passed to an operation."""


class PenaltyDomainError(CdnSimError, ValueError):
    """A penalty function was evaluated outside its domain."""


class BelowRangeError(PenaltyDomainError):
    """inv_deriv was asked for a marginal cost below h'(0)."""


class StepSizeError(ConfigError):
    """Dual step size outside (0, m)."""


class InitializationError(ConfigError):
    """Initial dual prices fall outside the admissible price region."""


class TraceFormatError(CdnSimError, ValueError):
    """Malformed trace, stream or profile file."""

    def __init__(self, message: str, line: int = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownFileError(CdnSimError):
    """A request refers to a file outside the catalog."""
