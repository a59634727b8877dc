"""Exception hierarchy shared by every contrakt module."""


class ContraktError(Exception):
    """Base class for all errors raised by contrakt."""


class MeasureError(ContraktError, ValueError):
    """Bad matrix input: wrong shape, non-finite entries, singular weight."""


class ExprError(ContraktError):
    """Expression-language failure (syntax, unknown names, arity, unbound variables)."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class ModelError(ContraktError):
    """Invalid switched-system description."""


class CertificationError(ContraktError):
    """Certification could not be carried out (e.g. no samples for a mode)."""


class SimulationError(ContraktError):
    """Integration failure: domain escape, event chatter, non-finite state."""

    def __init__(self, message, time=None):
        self.time = time
        super().__init__(message)


class NetworkError(ContraktError):
    """Invalid network description or disconnected topology."""
