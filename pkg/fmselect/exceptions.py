"""
Exception Types
Error hierarchy shared by every fmselect module.
"""

from typing import Any, Dict, List, Optional


class FmselectError(Exception):
    """Base class for all fmselect errors."""


class InvalidDimensionError(FmselectError):
    """Raised when a basis or layout dimension is out of range."""


class DomainError(FmselectError):
    """Raised when an evaluation point or parameter lies outside its domain."""


class AssemblyError(FmselectError):
    """Raised when designs, bases and coefficient vectors do not conform."""


class DatasetError(FmselectError):
    """Raised for malformed or inconsistent datasets."""


class ParameterError(FmselectError):
    """Raised for invalid prior or solver parameters."""


class GenerationError(FmselectError):
    """Raised when a simulated dataset cannot be calibrated."""


class NumericError(FmselectError):
    """Raised when a computation produces non-finite or indefinite quantities.

    Args:
        message: Description of the failure
        state: Optional diagnostic payload (e.g. the last parameter state)
    """

    def __init__(self, message: str, state: Optional[Any] = None):
        super().__init__(message)
        self.state = state


class TuningError(FmselectError):
    """Raised when every fit of a tuning grid failed.

    Args:
        message: Description of the failure
        diagnostics: One entry per grid point with its error text
    """

    def __init__(self, message: str, diagnostics: Optional[List[Dict[str, Any]]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class ConfigError(FmselectError):
    """Raised for invalid run configuration.

    Args:
        message: Description of the failure
        source: Configuration file the offending key came from
        line: 1-based line of the offending key, when known
    """

    def __init__(self, message: str, source: Optional[str] = None, line: Optional[int] = None):
        self.source = source
        self.line = line
        location = ""
        if source:
            location = f"{source}:{line}: " if line else f"{source}: "
        super().__init__(f"{location}{message}")
