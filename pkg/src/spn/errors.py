"""Exception hierarchy shared by the package."""


class SPNError(Exception):
    """Base class for all package errors."""


class ConfigError(SPNError, ValueError):
    """Invalid configuration or inconsistent layer shapes."""


class InputError(SPNError, ValueError):
    """Malformed numeric input (non-finite values, mismatched shapes)."""


class DatasetError(SPNError):
    """Dataset directory could not be read or failed validation."""


class CheckpointError(SPNError):
    """Base class for checkpoint read failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CheckpointLayoutError(CheckpointError):
    """Header shapes/offsets disagree with each other or with the file."""


class NonErgodicError(SPNError, ArithmeticError):
    """Stationary system is singular beyond tolerance."""
