"""
Exception hierarchy shared by every module.
The CLI maps each class to an exit code.
"""


class DPSEError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigurationError(DPSEError):
    """Invalid parameter or configuration value."""

    exit_code = 2


class ShapeError(DPSEError):
    """Dimension or wavelength-grid mismatch between artifacts."""


class FormatError(DPSEError):
    """File contents do not match the declared format."""


class DomainError(DPSEError):
    """Argument outside the validity range of a model."""


class SingularityError(DPSEError):
    """Division by a zero spectral bin."""

    def __init__(self, message: str, frequency_bin: tuple = None):
        super().__init__(message)
        self.frequency_bin = frequency_bin


class NumericalError(DPSEError):
    """Non-finite values where finite ones are required."""

    def __init__(self, message: str, diagnostics: dict = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
