"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible or an operand is empty."""


class InputError(ValueError):
    """An input value violates an operation's contract (non-finite, mixed policies, ...)."""


class MaskError(ValueError):
    """An attention mask entry is out of the valid range."""


class ConfigError(ValueError):
    """A configuration violates its invariants."""


class ParameterError(ValueError):
    """A distribution parameter is out of its valid domain."""


class CapacityError(RuntimeError):
    """A sequence would exceed the model's position capacity."""


class CacheGapError(RuntimeError):
    """A forward pass requires key/value entries that were never computed."""


class CacheOverwriteError(RuntimeError):
    """An operation would overwrite already-populated cache entries."""


class WeightFileError(ValueError):
    """A serialized weight file is malformed or inconsistent."""


class CorpusParseError(ValueError):
    """A corpus file line could not be parsed. Carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class CorpusValidationError(ValueError):
    """A corpus record violates the vocabulary or shape contract."""


class InsufficientDataError(RuntimeError):
    """Too few samples to fit a distribution component; caller keeps its state."""


class EstimatorFrozenError(RuntimeError):
    """The adaptive estimator no longer accepts updates."""
