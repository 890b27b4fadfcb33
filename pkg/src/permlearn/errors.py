"""Exception types shared across the package."""


class PermlearnError(Exception):
    """Base class for all package errors."""


class DimensionError(PermlearnError, ValueError):
    pass


class DomainError(PermlearnError, ValueError):
    """Input outside the mathematical domain (NaN, Inf, negative mass...)."""


class FeasibilityError(PermlearnError, ValueError):
    """Matrix is not doubly stochastic within tolerance."""


class SizeError(PermlearnError, ValueError):
    pass


class TapeError(PermlearnError, RuntimeError):
    pass


class TrainingError(PermlearnError, RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class FormatError(PermlearnError, ValueError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row
