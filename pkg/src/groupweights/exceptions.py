"""Exception types raised by the library."""


class DomainError(ValueError):
    """An argument lies outside the domain of a density or update."""


class StructuralError(ValueError):
    """Shapes, group layouts or designs are inconsistent."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared during fitting."""

    def __init__(self, message, task=None, group=None):
        super().__init__(message)
        self.task = task
        self.group = group


class ConfigError(ValueError):
    """A configuration file or command line value is invalid."""
