"""Exception types raised across the package."""


class HRTError(Exception):
    """Base class for all package errors."""


class DimensionError(HRTError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(HRTError, RuntimeError):
    """A documented precondition of an operation was violated."""


class ConfigError(HRTError, ValueError):
    """Invalid model, loss or training configuration."""


class InputError(HRTError, ValueError):
    """Malformed or empty input data."""


class CorpusFormatError(InputError):
    """A corpus line could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DivergenceError(HRTError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at step {step}")
