"""Exception hierarchy shared across the package."""

from __future__ import annotations


class QuantileAllocError(Exception):
    """Base class for all package errors."""


class DomainError(QuantileAllocError, ValueError):
    """A probability or quantile level fell outside [0, 1]."""


class DataError(QuantileAllocError, ValueError):
    """Input data is malformed or outside its declared support."""


class EstimatorEmptyError(QuantileAllocError, RuntimeError):
    """A kernel CDF estimate was evaluated before any sample was added."""


class InvalidHistoryError(QuantileAllocError, ValueError):
    """The historical stream cannot support the requested policy."""


class ConfigError(QuantileAllocError, ValueError):
    """Inconsistent policy or experiment configuration."""


class SizeError(QuantileAllocError, ValueError):
    """An exact computation was requested beyond its size limit."""


class ScenarioError(QuantileAllocError, ValueError):
    """A scenario document failed schema or invariant validation."""


class ConvergenceWarning(UserWarning):
    """The dual solver stopped at its iteration cap."""
