"""Exception types raised across the pipeline."""


class KGTrimmerError(Exception):
    """Base class for all package errors."""


class DataFormatError(KGTrimmerError, ValueError):
    """A data file line could not be parsed."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class EmptyDatasetError(KGTrimmerError, ValueError):
    pass


class ValidationError(KGTrimmerError, ValueError):
    pass


class AlignmentError(KGTrimmerError, ValueError):
    pass


class ConfigError(KGTrimmerError, ValueError):
    pass


class TrainingDivergedError(KGTrimmerError, RuntimeError):
    """Raised when the loss or a gradient becomes non-finite."""
