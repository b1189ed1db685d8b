"""Exception types shared across the package.

Refusals (a construction is impossible for the given input, and we can
prove or strongly certify why) are distinct from caller errors and from
internal verification failures.  The CLI maps these onto exit codes:
refusals exit 2, verification failures exit 3, bad input exits 4.
"""


class ConvexBandError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class RefusalError(ConvexBandError):
    """A requested construction is impossible; the reason is attached."""

    exit_code = 2


class RayDetected(RefusalError):
    """The function is affine on some ray inside the domain."""

    def __init__(self, point=None, direction=None, message=None):
        self.point = point
        self.direction = direction
        super().__init__(message or f"affine along ray: base={point}, direction={direction}")


class LineDetected(RefusalError):
    """The function is affine on the trace of a full line inside the domain."""

    def __init__(self, point=None, direction=None, message=None):
        self.point = point
        self.direction = direction
        super().__init__(message or f"affine along line: base={point}, direction={direction}")


class ConeContainsLine(RefusalError):
    """A cone to be separated contains a line, so no strict separator exists."""


class BoundaryRayDetected(RefusalError):
    """The body's boundary contains a ray, so an outer surface of the requested kind fails."""


class TubeTooTight(RefusalError):
    """The requested surface tube width cannot be certified for this body."""


class NotDifferentiable(RefusalError):
    """A gradient was requested at a kink of a nonsmooth function."""


class VerificationError(ConvexBandError):
    """A certificate or invariant check failed after construction."""

    exit_code = 3


class CertificateTampered(VerificationError):
    """Stored margin hash does not match the recomputed margins."""


class RankDeficientSupports(VerificationError):
    """Support enrichment failed to span; the smoothed pieces cannot curve in every direction."""


class LedgerViolation(VerificationError):
    """A per-stage glue inequality failed on its grid; the construction aborted."""


class InputError(ConvexBandError):
    """Malformed problem description, file, or CLI arguments."""

    exit_code = 4


class PointOutsideDomain(InputError):
    """Evaluation requested outside the function's domain."""


class OutsideSampledHull(InputError):
    """A hull ceiling query fell outside the sampled anchors; extrapolation is refused."""


class LevelNotCrossed(InputError):
    """Level-set extraction found no crossing inside the sampled window."""
