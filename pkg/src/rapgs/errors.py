"""Exception types shared across the package.

The CLI maps these onto exit codes: validation problems exit 2, I/O 1,
numeric failures 3 and evaluation-domain failures 4.
"""


class RapError(Exception):
    """Base class for all package errors."""


class ValidationError(RapError, ValueError):
    """Input violates a documented precondition."""


class PlyFormatError(ValidationError):
    """Malformed or unsupported PLY header."""


class TruncationError(PlyFormatError):
    """PLY payload shorter than the declared element count."""


class DegenerateRotationError(ValidationError):
    def __init__(self, indices):
        self.indices = list(indices)
        shown = ", ".join(str(i) for i in self.indices[:10])
        more = "" if len(self.indices) <= 10 else f" (+{len(self.indices) - 10} more)"
        super().__init__(f"zero-norm quaternion at index {shown}{more}")


class InsufficientPointsError(ValidationError):
    """Fewer points than a neighborhood query needs."""


class FeatureFormatError(ValidationError):
    """Malformed binary feature/score/image file or weight document."""


class NumericError(RapError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class OverlapError(RapError):
    """Two rate-distortion curves share no quality range."""
