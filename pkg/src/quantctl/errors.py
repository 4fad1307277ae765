"""Exception and warning types shared across the package."""


class QuantCtlError(Exception):
    """Base class for package errors."""


class InvalidParameterError(QuantCtlError, ValueError):
    pass


class DegenerateTransformError(QuantCtlError, ValueError):
    """An affine map with zero gain would produce a point mass."""


class EmptyCellError(QuantCtlError):
    """A quantizer cell (or integration interval) carries no probability."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class InvalidQuantizerError(QuantCtlError, ValueError):
    pass


class DegenerateCodebookError(QuantCtlError):
    pass


class InfeasibleConstraintError(QuantCtlError):
    pass


class ConvergenceWarning(UserWarning):
    """An iterative design stopped at ``max_iter`` before meeting ``tol``."""
