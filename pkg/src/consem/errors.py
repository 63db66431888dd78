"""Exception types shared across the package.

Every error raised on a bad input or a violated contract derives from
:class:`ConsemError`, so callers can catch one base class at the CLI
boundary while tests assert on the specific subclass.
"""

from __future__ import annotations

__all__ = [
    "ConsemError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DegenerateInputError",
    "FormatError",
    "MetricError",
    "ShapeError",
    "TrainingDivergedError",
    "VocabularyError",
]


class ConsemError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ConsemError, ValueError):
    """Operands have incompatible or invalid shapes."""


class ConfigError(ConsemError, ValueError):
    """A configuration value is missing, unknown, or out of range."""


class ContractError(ConsemError, ValueError):
    """A documented precondition between components was violated."""


class DegenerateInputError(ConsemError, ValueError):
    """An input is degenerate for the requested operation (zero norm, all padding)."""


class DataError(ConsemError, ValueError):
    """A data file contains a malformed or invalid record."""


class FormatError(ConsemError, ValueError):
    """A serialized artifact does not match its documented binary or text format."""


class VocabularyError(ConsemError, ValueError):
    """Token ids and vocabulary disagree (out of range, hash mismatch)."""


class MetricError(ConsemError, ValueError):
    """A metric is undefined for the given inputs (for example an empty sample)."""


class TrainingDivergedError(ConsemError, RuntimeError):
    """Training produced a non-finite loss or gradient."""
