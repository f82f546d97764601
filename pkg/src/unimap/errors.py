"""Exception types shared across the package.

Each class carries a ``category`` string that the CLI prints as the message
prefix, so callers can tell argument problems from I/O or training failures.
"""


class UnimapError(Exception):
    category = "error"


class ArgumentError(UnimapError, ValueError):
    category = "argument error"


class DimensionError(ArgumentError):
    category = "dimension error"


class NonFiniteError(UnimapError, FloatingPointError):
    category = "numeric error"


class TrainingError(UnimapError, RuntimeError):
    category = "training error"

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class UndefinedCorrelationError(ArgumentError):
    category = "undefined correlation"


class FormatError(UnimapError, ValueError):
    category = "format error"
