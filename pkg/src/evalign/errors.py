"""Exception types shared across the package."""


class EvalignError(Exception):
    """Base class for all package errors."""


class ConfigError(EvalignError):
    """Invalid configuration: bad ranges, non-positive hyperparameters, unknown keys."""


class FormatError(EvalignError):
    """Malformed binary file or manifest; carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class IntegrityError(EvalignError):
    """Well-formed file whose contents violate a declared invariant."""


class TrainingDiverged(EvalignError):
    """Training loss became non-finite."""
