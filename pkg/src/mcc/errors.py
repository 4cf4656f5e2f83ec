"""Exception types raised by the package."""


class MCCError(Exception):
    """Base class for package errors."""


class FormatError(MCCError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(MCCError, ValueError):
    """Modality boundaries disagree with the data."""


class ValidationError(MCCError, ValueError):
    """Loaded values violate a dataset invariant (NaN features, bad labels)."""


class TrainingAborted(MCCError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, seed=None, iteration=None):
        self.seed = seed
        self.iteration = iteration
        super().__init__(f"{message} (seed={seed}, iteration={iteration})")
