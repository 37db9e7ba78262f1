class ChmmError(Exception):
    """Base class for errors raised by this package."""


class CapacityError(ChmmError, ValueError):
    """Requested clone capacity cannot satisfy the per-symbol minimum."""


class ModelValidationError(ChmmError, ValueError):
    """A model violates the row-stochastic / prior / finiteness invariants."""


class ModelFileError(ChmmError):
    """Base class for model file problems."""


class CorruptHeaderError(ModelFileError):
    pass


class ShapeMismatchError(ModelFileError):
    pass


class NonFiniteValueError(ModelFileError):
    pass


class ImpossibleSequenceError(ChmmError):
    """A training sequence has zero probability under the current model."""

    def __init__(self, message: str, sequence_index: int | None = None, step: int | None = None):
        super().__init__(message)
        self.sequence_index = sequence_index
        self.step = step
