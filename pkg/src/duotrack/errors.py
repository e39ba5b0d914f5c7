"""Exception types shared across the package."""


class DuoTrackError(Exception):
    """Base class for all errors raised by this package."""


class AngleNearPi(DuoTrackError):
    """Rotation angle too close to pi for a well-conditioned logarithm."""


class BehindCamera(DuoTrackError):
    """Point lies at or behind the near plane and cannot be projected."""


class InvalidDepth(DuoTrackError):
    """Depth value is non-positive, non-finite, or marked invalid."""


class ManifestParse(DuoTrackError):
    """Dataset manifest is malformed or violates the schema."""


class MissingAsset(DuoTrackError):
    """Manifest references a per-frame file that does not exist."""


class DimensionMismatch(DuoTrackError):
    """Per-frame maps disagree in size with each other or the intrinsics."""


class EmptyObject(DuoTrackError):
    """An object has too few usable pixels to estimate its motion."""

    def __init__(self, label, message=None):
        self.label = label
        super().__init__(message or f"too few usable pixels for object {label!r}")


class SingularNormalEquations(DuoTrackError):
    """The damped 6x6 normal equations are numerically singular."""


class TooFewPoints(DuoTrackError):
    """Fewer than three point pairs; rigid fit is underdetermined."""


class DegenerateConfiguration(DuoTrackError):
    """Point configuration is (near-)collinear; rotation is not unique."""


class MissingPose(DuoTrackError):
    """Ground-truth pose requested but absent from the manifest."""


class IOFailure(DuoTrackError):
    """Failed to read or write dataset assets."""


class ConfigError(DuoTrackError):
    """Configuration file is malformed or contains unknown keys."""
