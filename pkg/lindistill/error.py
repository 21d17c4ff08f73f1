"""Errors and warnings."""


class ContractError(ValueError):
    """Raised when a configuration or call contract is violated.

    Typically raised when a configuration file fails schema validation
    or a configuration object is built with out-of-range fields. When
    the violation can be pinned to a single field, its dotted path is
    available as :attr:`field`.
    """

    def __init__(self, message="", *, field=None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class UsageError(ValueError):
    """Raised when an operation is called with incompatible arguments."""


class DomainError(ValueError):
    """Raised when a mathematical precondition does not hold.

    For example a zero vector where a direction is required, an angle
    outside of its range, or the hypothesis of a risk bound failing.
    """


class SingularityError(DomainError):
    """Raised when a data matrix does not have full column rank."""


class FormatError(ValueError):
    """Raised when an input file is not in the expected format."""


class MissingDataError(FileNotFoundError):
    """Raised when dataset files cannot be found.

    :param paths: Every path that was expected to exist.
    """

    def __init__(self, paths):
        self.paths = [str(path) for path in paths]
        listing = ", ".join(self.paths)
        super().__init__(
            f"dataset files not found; expected {listing} "
            f"(set --mnist-dir or LINDISTILL_MNIST_DIR)")


class StepSizeError(RuntimeError):
    """Raised when descent keeps diverging after all step halvings."""


class NumericError(ArithmeticError):
    """Raised when parameters stop being finite during training.

    :param iteration: Index of the iteration at which it was detected.
    """

    def __init__(self, message, *, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration
