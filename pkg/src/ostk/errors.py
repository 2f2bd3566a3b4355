"""Exception types shared across the toolkit."""

from __future__ import annotations


class OstkError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(OstkError, ValueError):
    """A value violates a type invariant or an argument contract."""


class ShapeError(ValidationError):
    """An array or window has the wrong dimensions for the operation."""


class CoverageError(OstkError, ValueError):
    """Frames required by an operation are missing or mismatched."""


class InsufficientDataError(OstkError, ValueError):
    """Fewer samples than the operation's stated minimum."""


class DegeneracyError(OstkError, ValueError):
    """Geometry admits no unique solution, or a projection is undefined."""


class ModelStateError(OstkError, RuntimeError):
    """A model was used before fitting or with inconsistent state."""


class GenerationError(OstkError, RuntimeError):
    """Scene synthesis could not satisfy its placement constraints."""


class DataQualityError(OstkError, RuntimeError):
    """Too many training windows were unusable to continue."""


class SchemaError(OstkError, ValueError):
    """A JSON document does not match the expected schema.

    ``path`` names the offending location, e.g. ``agents[2].visual[17]``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class ConfigError(OstkError, ValueError):
    """Invalid experiment or CLI configuration (CLI exit code 2)."""


class PipelineError(OstkError, RuntimeError):
    """Failure inside a named pipeline stage (CLI exit code 3)."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
