"""Exception hierarchy shared by every tenet module."""


class TenetError(Exception):
    """Base class for all errors raised by tenet."""


class InvalidArgumentError(TenetError, ValueError):
    pass


class ShapeError(TenetError, ValueError):
    pass


class ConfigurationError(TenetError, ValueError):
    pass


class DegenerateInputError(TenetError, ValueError):
    pass


class FormatError(TenetError, ValueError):
    pass


class EvaluationError(TenetError, FloatingPointError):
    """A forward or loss evaluation produced non-finite values."""
