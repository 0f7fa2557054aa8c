"""Exception types shared across the package."""


class EngramLMError(Exception):
    """Base class for package errors."""


class EmptyInputError(EngramLMError, ValueError):
    """An operation received an empty input it cannot act on."""


class OutOfRangeError(EngramLMError, IndexError):
    """A token id falls outside the vocabulary."""


class ShapeError(EngramLMError, ValueError):
    """Tensor dimensions are inconsistent with the declared contract."""


class DegenerateBatchError(EngramLMError, ValueError):
    """Every position in the batch is masked out of the loss."""


class NumericalDivergence(EngramLMError, RuntimeError):
    """Training produced a non-finite loss.

    Carries the last step that completed with a finite loss so a run can be
    inspected or resumed from its most recent checkpoint.
    """

    def __init__(self, message: str, last_good_step: int):
        super().__init__(message)
        self.last_good_step = last_good_step


class ParseError(EngramLMError, ValueError):
    """A log or record file could not be parsed.

    ``line`` is the 1-based line number of the offending line.
    """

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InsufficientDataError(EngramLMError, ValueError):
    """Too few points for the requested fit or detection."""


class RangeError(EngramLMError, ValueError):
    """Two series do not overlap on the requested step range."""


class ConfigError(EngramLMError, ValueError):
    """Configuration values are inconsistent or invalid."""


class EncodingError(EngramLMError, ValueError):
    """Input bytes are not valid text. ``offset`` is the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"byte {offset}: {message}")
        self.offset = offset
