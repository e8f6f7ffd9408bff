"""Exception hierarchy shared across the package.

The CLI maps these to exit codes: ConfigError -> 2, DependencyError -> 3,
NumericError (and subclasses) -> 4.
"""
from __future__ import annotations


class RepMolGenError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(RepMolGenError):
    """Invalid or inconsistent configuration."""


class DependencyError(RepMolGenError):
    """A required artifact (checkpoint, corpus, file) is missing."""


class NumericError(RepMolGenError):
    """Numerical failure during training or sampling."""


class TrainingDivergenceError(NumericError):
    """Non-finite gradients or loss encountered during training."""


class SamplingError(NumericError):
    """Non-finite state encountered during a reverse-diffusion chain."""


class DimensionError(RepMolGenError, ValueError):
    """Array shape incompatible with the requested operation."""


class StateError(RepMolGenError, RuntimeError):
    """Operation called in an invalid order (e.g. backward before forward)."""


class InvariantViolationError(RepMolGenError, ValueError):
    """A structural invariant (orthogonality, zero center of mass, ...) was violated."""


class ParseError(RepMolGenError, ValueError):
    """Malformed input file."""
