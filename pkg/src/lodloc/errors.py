"""Exception hierarchy.

Every error carries a short machine-readable ``category`` used by the CLI
for its exit status line.
"""


class LodLocError(Exception):
    category = "error"


class ParseError(LodLocError):
    category = "parse"


class ValidationError(LodLocError):
    category = "validation"


class TriangulationError(LodLocError):
    category = "triangulation"


class DuplicateBuildingError(LodLocError):
    category = "duplicate-building"


class LastFrameError(LodLocError):
    category = "last-frame"


class BehindCameraError(LodLocError):
    category = "behind-camera"


class OutOfBoundsError(LodLocError):
    category = "out-of-bounds"


class ImageTooSmallError(LodLocError):
    category = "image-too-small"


class EmptySetError(LodLocError):
    category = "empty-set"


class ThresholdError(LodLocError):
    category = "threshold"


class DimensionMismatchError(LodLocError):
    category = "dimension-mismatch"


class MissingMaskError(LodLocError):
    category = "missing-mask"


class MissError(LodLocError):
    category = "miss"


class PreconditionError(LodLocError):
    category = "precondition"


class IllConditionedError(LodLocError):
    """Base for geometry that does not determine a unique pose."""

    category = "ill-conditioned"


class DegenerateConfigError(IllConditionedError):
    category = "degenerate-config"


class SingularNormalMatrixError(IllConditionedError):
    category = "singular-normal-matrix"


class NonConvergenceError(LodLocError):
    """Raised when the adjustment hits ``max_iter``; ``best`` holds the last iterate."""

    category = "non-convergence"

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DivisionByZeroError(LodLocError, ZeroDivisionError):
    category = "division-by-zero"


class ConfigError(LodLocError):
    category = "config"
