"""Exception hierarchy shared by all rigidreg modules."""


class RegistrationError(Exception):
    """Base class for every error raised by this package."""


class EmptyCloud(RegistrationError):
    """An operation requires a non-empty point cloud."""


class MissingFeatures(RegistrationError):
    """Per-point features are required but absent."""


class DimensionMismatch(RegistrationError):
    """Feature dimensions of the two clouds disagree."""


class LengthMismatch(RegistrationError):
    """Two parallel sequences have different lengths."""


class WeightLengthMismatch(LengthMismatch):
    """A weight vector does not match the correspondence count."""


class AllWeightsFiltered(RegistrationError):
    """Prefiltering removed every weight; caller should fall back."""


class TooFewCorrespondences(RegistrationError):
    """Fewer than the minimum number of usable correspondences."""


class DegenerateConfiguration(RegistrationError):
    """Weighted points are collinear or coincident; rotation underdetermined."""


class NumericallyUnstableGradient(RegistrationError):
    """Gradient through the SVD is ill-conditioned (repeated singular values)."""


class DegenerateRepresentation(RegistrationError):
    """A 6D rotation parameterization violates its non-degeneracy invariants."""


class NotARotation(RegistrationError):
    """A 3x3 matrix is not orthonormal with determinant +1."""


class NoActiveCorrespondences(RegistrationError):
    """All correspondence weights fall at or below the prefilter threshold."""


class EmptyCorrespondences(RegistrationError):
    """A correspondence set is empty."""


class NoConsensus(RegistrationError):
    """RANSAC found no hypothesis with a minimal consensus set."""


class RegistrationFailed(RegistrationError):
    """Both the solver branch and the safeguard branch failed."""


class FileFormatError(RegistrationError):
    """A file is malformed; the message locates the offending line or offset."""


class UnsupportedFormat(RegistrationError):
    """A file uses a format variant this package does not read."""
