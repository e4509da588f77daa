"""
Exceptions raised by the heading regression library.

The CLI maps them onto exit codes:
- DomainError (and subclasses) -> 3
- DatasetParseError, CheckpointFormatError, CameraFormatError, ShapeMismatchError -> 1
- ConfigConflictError -> 2 (usage)
"""


class TempoContError(Exception):
    """Base class for library errors."""


class DomainError(TempoContError):
    """A mathematically undefined request (no ray hit, zero-length encoding)."""


class DegenerateEncodingError(DomainError, ValueError):
    """(c, s) too close to the origin to define an angle."""


class NoIntersectionError(DomainError, ValueError):
    """Back-projected ray never meets the ground plane in front of the camera."""


class ShapeMismatchError(TempoContError, ValueError):
    """Array shapes disagree with the model or optimiser configuration."""


class TrainingDivergedError(TempoContError, RuntimeError):
    """A loss or gradient became non-finite during training."""


class DatasetParseError(TempoContError, ValueError):
    """Malformed dataset file."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class CheckpointFormatError(TempoContError, ValueError):
    """Malformed or incompatible checkpoint file."""


class CameraFormatError(TempoContError, ValueError):
    """Malformed camera description file."""


class ConfigConflictError(TempoContError, ValueError):
    """Settings that cannot run together (e.g. lambda > 0 without unlabeled data)."""
