"""Exception and warning types raised across the package."""


class PGDMError(Exception):
    """Base class for all package errors."""

    code = "error"


class InvalidInput(PGDMError, ValueError):
    code = "invalid_input"


class ShapeError(PGDMError, ValueError):
    code = "shape_error"


class InvalidArity(PGDMError, ValueError):
    code = "invalid_arity"


class InvalidTarget(PGDMError, ValueError):
    code = "invalid_target"


class InvalidState(PGDMError, RuntimeError):
    code = "invalid_state"


class NumericalDivergence(PGDMError, FloatingPointError):
    """A reverse diffusion step produced non-finite values."""

    code = "numerical_divergence"

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite values at diffusion step {step}")


class MissingArtifact(PGDMError, FileNotFoundError):
    code = "missing_artifact"


class StaleArtifact(PGDMError):
    code = "stale_artifact"


class DegenerateDataWarning(UserWarning):
    pass


class SplitWarning(UserWarning):
    pass
