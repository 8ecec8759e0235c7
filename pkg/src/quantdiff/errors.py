"""Exception hierarchy.

Every error carries a short machine-readable ``code`` (``"invalid-token"``,
``"diverged"``, ...) so the CLI and tests can dispatch on it without string
matching on messages.
"""


class QuantdiffError(Exception):
    code = "error"
    #: Numerical failures map to CLI exit code 2, everything else to 1.
    numerical = False

    def __init__(self, message: str = ""):
        super().__init__(f"{self.code}: {message}" if message else self.code)


class DegenerateDimensionError(QuantdiffError):
    code = "degenerate-dimension"

    def __init__(self, dim: int, message: str = ""):
        self.dim = dim
        super().__init__(message or f"dimension {dim} has zero percentile range")


class InvalidActionError(QuantdiffError):
    code = "invalid-action"


class InvalidTokenError(QuantdiffError):
    code = "invalid-token"


class InvalidSmoothingError(QuantdiffError):
    code = "invalid-smoothing"


class ShapeMismatchError(QuantdiffError):
    code = "shape-mismatch"


class DegenerateTauError(QuantdiffError):
    code = "degenerate-tau"


class BehindCameraError(QuantdiffError):
    code = "behind-camera"


class ConfigError(QuantdiffError):
    code = "invalid-config"


class DivergedError(QuantdiffError):
    code = "diverged"
    numerical = True

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite value at step {step}")


class GradcheckError(QuantdiffError):
    code = "gradcheck-failed"
    numerical = True


class DatasetError(QuantdiffError):
    code = "invalid-dataset"
