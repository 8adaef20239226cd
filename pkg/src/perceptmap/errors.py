"""Exception hierarchy for the perceptmap pipeline.

Every failure mode raised by the package derives from PerceptMapError so
callers (CLI, API) can map errors to exit codes / HTTP statuses in one place.
"""

from __future__ import annotations


class PerceptMapError(Exception):
    """Base class for all perceptmap errors."""


class ConflictError(PerceptMapError):
    """An insert collides with an existing record carrying a different payload."""


class NotFoundError(PerceptMapError):
    """A referenced record does not exist in the store."""


class InvalidVoteError(PerceptMapError):
    """A vote violates the voting rules (e.g. compares an image with itself)."""


class ParseError(PerceptMapError):
    """A persisted file is malformed.

    Carries the offending path and, when known, the 1-based line number or
    byte offset so operators can locate the bad record.
    """

    def __init__(self, message: str, *, path: str | None = None,
                 line: int | None = None, offset: int | None = None):
        loc = path or "<input>"
        if line is not None:
            loc += f":{line}"
        elif offset is not None:
            loc += f"@byte {offset}"
        super().__init__(f"{loc}: {message}")
        self.path = path
        self.line = line
        self.offset = offset


class ReferentialIntegrityError(PerceptMapError):
    """A vote or feature row references an image absent from the snapshot."""


class GeometryError(PerceptMapError):
    """A geofence polygon is degenerate or otherwise unusable."""


class ConfigurationError(PerceptMapError):
    """Required configuration (e.g. provider credentials) is missing."""


class IngestionError(PerceptMapError):
    """Image acquisition failed for every requested sample point."""


class FilteringError(PerceptMapError):
    """An image cannot be filtered because its descriptor count is unknown."""


class FormatError(PerceptMapError):
    """A binary feature file has the wrong shape for this stage."""


class PairsExhaustedError(PerceptMapError):
    """No admissible image pair remains to serve."""


class SessionError(PerceptMapError):
    """A survey session is unknown or expired."""


class AlreadyVotedError(PerceptMapError):
    """A second vote was submitted for an already-consumed session."""


class StatsError(PerceptMapError):
    """Normalization statistics cannot be computed from the given image set."""


class BuildError(PerceptMapError):
    """A training example cannot be built (e.g. a vote lacks feature vectors)."""


class SplitError(PerceptMapError):
    """Dataset split fractions are invalid or yield an impossible partition."""


class NumericError(PerceptMapError):
    """A non-finite value appeared during training or inference."""


class PlanError(PerceptMapError):
    """Synthetic pair planning preconditions are not met."""


class PredictionError(PerceptMapError):
    """A synthetic pair cannot be predicted (e.g. missing feature vector)."""


class EmitError(PerceptMapError):
    """A map cannot be emitted (no scored images for the zone)."""
