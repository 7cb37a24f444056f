"""Exception types shared across the package."""


class AbundmapError(Exception):
    """Base class for package errors."""


class ParameterError(AbundmapError, ValueError):
    """A distribution or model parameter is outside its domain."""


class DataError(AbundmapError, ValueError):
    """Input data violates a schema or contains non-finite values."""


class TruncationError(AbundmapError):
    """A truncated summation left more tail mass than the caller allowed."""


class KrigingError(AbundmapError):
    """Covariance fitting failed; carries optimizer diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InitializationError(AbundmapError):
    """The sampler could not find a finite starting log density."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class SamplerError(AbundmapError):
    """MCMC failed while running (non-finite state, degenerate adaptation)."""


class CalibrationError(AbundmapError):
    """District calibration is degenerate (zero predicted mass, known total > 0)."""
