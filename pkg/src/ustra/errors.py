"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so each class carries the code it
should produce.
"""


class UstraError(Exception):
    exit_code = 1


class ValidationError(UstraError, ValueError):
    exit_code = 2


class DimensionError(ValidationError):
    """Operand shapes are inconsistent."""


class ContractError(ValidationError):
    """A caller broke a documented precondition."""


class FormatError(ValidationError):
    """A file has the wrong magic number or version."""


class CorruptionError(FormatError):
    """A file ended early or holds inconsistent sizes."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UndefinedMetricError(ValidationError):
    pass


class NumericError(UstraError, ArithmeticError):
    exit_code = 3


class DomainError(NumericError):
    """Math function evaluated outside its domain (e.g. log of 0)."""
