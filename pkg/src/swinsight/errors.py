"""Exception hierarchy.  ``exit_code`` feeds the CLI's stable exit-code contract."""


class SwinsightError(Exception):
    exit_code = 1


class ConfigError(SwinsightError, ValueError):
    """Bad configuration, flags or model hyperparameters."""

    exit_code = 1


class ShapeError(SwinsightError, ValueError):
    """Tensor shapes do not satisfy an op's preconditions."""

    exit_code = 3


class NumericError(SwinsightError, ArithmeticError):
    """A NaN/Inf appeared, or an iterative solver failed to converge."""

    exit_code = 3


class DataError(SwinsightError):
    """Manifest, image or dataset-curation problem."""

    exit_code = 2


class ManifestError(DataError, ValueError):
    pass


class QuarantineError(DataError):
    """An image could not be decoded; callers record it and move on."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = str(reason)


class InsufficientSamplesError(DataError, ValueError):
    def __init__(self, message, available):
        super().__init__(message)
        self.available = dict(available)


class CheckpointError(SwinsightError, ValueError):
    exit_code = 2


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class IntegrityError(CheckpointError):
    """Shape table disagrees with the payload."""
