"""Exception types shared across the package."""


class AeauditError(Exception):
    """Base class for all errors raised by this package."""


class InputDomainError(AeauditError, ValueError):
    """An argument is outside the documented domain (shape, range, finiteness)."""


class DegenerateBasisError(InputDomainError):
    """A matrix whose columns must be linearly independent is rank deficient."""


class FormatError(AeauditError, ValueError):
    """A file does not conform to its documented format."""


class NumericalError(AeauditError, RuntimeError):
    """An iterative numerical routine failed to converge."""


class TrainingDivergedError(AeauditError, RuntimeError):
    """Training produced non-finite loss or parameters.

    Attributes:
        last_good_epoch: Last completed epoch with finite loss (-1 if none).
    """

    def __init__(self, message: str, last_good_epoch: int = -1) -> None:
        super().__init__(message)
        self.last_good_epoch = last_good_epoch


class SubspaceMismatchError(AeauditError, RuntimeError):
    """A model has not converged to the subspace an analytic construction needs.

    Attributes:
        angles: Principal angles (radians) between the model's encoder span
            and the reference subspace, ascending.
    """

    def __init__(self, message: str, angles=None) -> None:
        super().__init__(message)
        self.angles = angles
