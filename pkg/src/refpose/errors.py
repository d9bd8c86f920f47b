"""Exception types raised across the toolkit."""


class RefposeError(Exception):
    """Base class for all refpose errors."""


class BehindCamera(RefposeError):
    """A 3D point lies at or behind the camera plane (z <= epsilon)."""


class ParseError(RefposeError):
    """A file failed to parse; carries the offending line number."""

    def __init__(self, message, line=None, path=None):
        loc = ""
        if path is not None:
            loc += f"{path}:"
        if line is not None:
            loc += f"{line}: "
        super().__init__(f"{loc}{message}")
        self.line = line
        self.path = path


class EmptyMatches(RefposeError):
    """A match file contained a header but no match pairs."""


class DegenerateConfiguration(RefposeError):
    """Minimal-solver input is degenerate (collinear points, coincident rays)."""


class TooFewCorrespondences(RefposeError):
    """Fewer correspondences than the solver's minimal sample size."""


class NoModelFound(RefposeError):
    """RANSAC exhausted its iteration budget without a supported model."""


class DivergedBehindCamera(RefposeError):
    """Optimization could not keep enough points in front of the camera."""


class SingularInformation(RefposeError):
    """The 6x6 pose information matrix is rank deficient."""


class SubsetTooSmall(RefposeError):
    """Requested sampling ratio yields fewer points than a minimal sample."""


class LengthMismatch(RefposeError):
    """Paired per-image sequences have different lengths."""


class EmptyInput(RefposeError):
    """A metric was asked to aggregate over an empty sequence."""
