"""Exception hierarchy shared by every pwkd module."""


class PWKDError(Exception):
    """Base class for all library errors."""


class ShapeError(PWKDError, ValueError):
    """Operand shapes are incompatible."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        shown = " vs ".join(str(s) for s in self.shapes)
        msg = f"{op}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NumericError(PWKDError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ConfigError(PWKDError, ValueError):
    """Invalid configuration value or combination.

    ``key`` names the offending setting when one can be identified; the CLI
    echoes it on exit code 2.
    """

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(message)


class DataError(PWKDError, OSError):
    """Malformed or unreadable dataset / checkpoint file."""

    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class CheckpointError(DataError):
    """Checkpoint version, layout or payload problem."""


class MissingGradientError(PWKDError, KeyError):
    """An optimizer step was asked to update a parameter with no gradient."""

    def __init__(self, name):
        self.name = name
        super().__init__(f"no gradient entry for parameter {name!r}")

    def __str__(self):
        return self.args[0]
