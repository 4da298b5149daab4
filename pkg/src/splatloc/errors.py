"""Exception hierarchy shared by all splatloc modules."""


class SplatlocError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(SplatlocError):
    """An argument violates a documented precondition."""


class BehindCameraError(SplatlocError):
    """Point at or behind the near plane; callers usually skip the point."""


class OutOfRangeError(SplatlocError):
    """Voxel index outside the signed 32-bit grid."""


class FormatError(SplatlocError):
    """Malformed file content (bad magic, header, field count, ...)."""

    def __init__(self, message, *, offset=None, line=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"byte {offset}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.offset = offset
        self.line = line


class TruncationError(FormatError):
    """File ended before the declared payload was complete."""


class EmptySubmapError(SplatlocError):
    """No map content within the requested radius."""


class DegenerateImageError(SplatlocError):
    """Image has zero variance; NCC is undefined."""


class InsufficientCorrespondencesError(SplatlocError):
    """Fewer valid 2D-3D correspondences than the minimal solver needs."""


class UnreliablePoseError(SplatlocError):
    """Pose estimate rejected: RANSAC consensus below the inlier floor."""


class TrainingError(SplatlocError):
    """Training cannot proceed (empty submap, missing frames, ...)."""


class ConfigError(SplatlocError):
    """Bad configuration value or unknown key."""


class TrackingAbortError(SplatlocError):
    """Live tracking could not be bootstrapped on the first frame."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
