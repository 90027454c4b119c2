"""Exception hierarchy shared by every module.

Each class maps to one CLI exit code (see ``srkit.cli``).
"""


class SrkitError(Exception):
    exit_code = 1


class DomainError(SrkitError, ValueError):
    """Value domain, channel layout or parameter range is wrong."""

    exit_code = 3


class ShapeError(SrkitError, ValueError):
    exit_code = 3


class SizeError(ShapeError):
    """Image too small for the requested window or patch size."""


class EmptyInput(SrkitError, ValueError):
    exit_code = 3


class InsufficientSamples(SrkitError, ValueError):
    exit_code = 3


class DegenerateInput(SrkitError, ValueError):
    exit_code = 3


class NumericalError(SrkitError, ArithmeticError):
    exit_code = 3


class FormatError(SrkitError, ValueError):
    """Malformed tensor file or report."""

    exit_code = 2
