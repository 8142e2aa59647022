"""Exception hierarchy shared by every module."""


class TacsError(Exception):
    """Base class for all package errors."""


class InvalidInputError(TacsError, ValueError):
    pass


class DegenerateSubspaceError(TacsError, ValueError):
    pass


class InvalidTransformError(TacsError, ValueError):
    pass


class ConfigError(TacsError, ValueError):
    pass


class ShapeError(TacsError, ValueError):
    pass


class NumericalGuardError(TacsError, FloatingPointError):
    pass


class SingularityError(TacsError, ValueError):
    """Two atoms closer than the surrogate property can handle."""


class UsageError(TacsError, TypeError):
    pass


class TrainingError(TacsError, RuntimeError):
    """Raised when training hits a non-finite loss or gradient.

    ``checkpoint`` holds the last parameter snapshot that was still finite.
    """

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class GuidanceError(TacsError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MissingPrerequisiteError(TacsError, FileNotFoundError):
    pass
