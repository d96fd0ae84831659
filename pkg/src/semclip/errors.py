"""Exception types shared across the package."""


class SemclipError(Exception):
    pass


class FormatError(SemclipError, ValueError):
    """A binary file (feature cache, checkpoint) failed header or size validation."""


class ShapeError(SemclipError, ValueError):
    pass


class ConfigError(SemclipError, ValueError):
    pass


class ConfigHashMismatch(FormatError):
    pass


class TrainingDivergence(SemclipError, RuntimeError):
    pass


class ClassOverlapError(SemclipError, ValueError):
    pass


class MissingCheckpointError(SemclipError, FileNotFoundError):
    pass
