"""Exception hierarchy shared by every nzcodec subsystem."""


class NZError(Exception):
    """Base class for all nzcodec errors."""


class DimensionError(NZError, ValueError):
    pass


class ContractError(NZError, RuntimeError):
    """An operation was called in a state its contract forbids."""


class NumericError(NZError, ArithmeticError):
    pass


class NonFiniteError(NumericError):
    """An operation produced NaN or Inf. ``op`` names the culprit."""

    def __init__(self, message, op=None):
        super().__init__(message)
        self.op = op


class ParameterizationError(NZError, ValueError):
    pass


class TableCapacityError(NZError, ValueError):
    pass


class CorruptStreamError(NZError, ValueError):
    pass


class FormatError(NZError, ValueError):
    pass


class ModelMismatchError(NZError, ValueError):
    pass


class InputError(NZError, ValueError):
    pass


class DatasetError(NZError, RuntimeError):
    pass


class CodecNotFoundError(NZError, FileNotFoundError):
    pass


class CodecRunError(NZError, RuntimeError):
    def __init__(self, message, output=""):
        super().__init__(message)
        self.output = output


class CodecTimeoutError(CodecRunError):
    pass
