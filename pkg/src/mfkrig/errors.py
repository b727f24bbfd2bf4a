"""Exception hierarchy shared by the library and the command line."""


class MfkrigError(Exception):
    """Base class for all errors raised by mfkrig."""

    exit_code = 1


class ConfigError(MfkrigError, ValueError):
    """Invalid configuration (bad ranges, unknown names, missing paths)."""

    exit_code = 2


class DataError(MfkrigError, ValueError):
    """Malformed or non-finite input data.

    ``row`` and ``column`` locate the offending cell when known (``row`` is
    the 1-based data row, header excluded).
    """

    exit_code = 3

    def __init__(self, message, row=None, column=None, path=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column
        self.path = path


class TableError(DataError):
    """Coefficient table missing or malformed."""


class NumericalError(MfkrigError, ArithmeticError):
    """Factorization failure or another numerical breakdown."""

    exit_code = 4

    def __init__(self, message, jitter_levels=()):
        super().__init__(message)
        self.jitter_levels = tuple(jitter_levels)


class DegenerateVarianceError(NumericalError):
    """The surrogate output has zero variance over the sampling box."""


class SourceError(MfkrigError, RuntimeError):
    """A fidelity source failed to evaluate a requested point.

    ``log`` holds the partial training log when raised from the
    sequential loop.
    """

    exit_code = 5

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log
