"""Exception hierarchy.

Everything raised deliberately by the package derives from
:class:`KexpfamError`.  The CLI maps :class:`ConfigError` to exit code 2
and :class:`NumericError` to exit code 3.
"""


class KexpfamError(Exception):
    pass


class ConfigError(KexpfamError, ValueError):
    """Malformed configuration or user input."""


class InvalidInputError(ConfigError):
    pass


class UnsupportedOrderError(ConfigError):
    pass


class OutOfSupportError(ConfigError):
    pass


class SizeCapError(ConfigError):
    pass


class FoldSizeError(ConfigError):
    pass


class DimensionCapError(ConfigError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyInputError(ParseError):
    pass


class NumericError(KexpfamError, ArithmeticError):
    """A computation produced a result that cannot be trusted."""


class SingularSystemError(NumericError):
    def __init__(self, message, condition=None):
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)
        self.condition = condition


class InfeasibleClipError(NumericError):
    pass


class ConvergenceError(NumericError):
    pass


class DegenerateCorrelationError(NumericError):
    pass
