"""Exception hierarchy shared by every stage of the pipeline.

Each class carries a stable ``exit_code`` so the command line can map a
failure to a machine-parseable status without inspecting messages.
"""


class TpsError(Exception):
    exit_code = 1


class ConfigError(TpsError, ValueError):
    exit_code = 2


class MissingInputError(TpsError, FileNotFoundError):
    exit_code = 3


class FormatError(TpsError):
    exit_code = 4


class StructuralError(TpsError, ValueError):
    exit_code = 5


class NumericalError(TpsError, ArithmeticError):
    exit_code = 6


class RangeError(TpsError, IndexError):
    exit_code = 7


class DegenerateBackgroundError(TpsError, ArithmeticError):
    """Raised when a background patch is perfectly flat (sigma = 0)."""

    exit_code = 8
