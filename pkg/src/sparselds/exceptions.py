"""Exception types shared across the package."""


class SparseLDSError(Exception):
    """Base class for all errors raised by sparselds."""


class RejectedInputError(SparseLDSError, ValueError):
    """Input violates a documented precondition."""


class DataError(RejectedInputError):
    """Raw data could not be ingested (bad file, schema, or content)."""


class NumericalFailureError(SparseLDSError, ArithmeticError):
    """A factorization failed even after jitter was added."""

    def __init__(self, message, time_index=None, iteration=None):
        super().__init__(message)
        self.time_index = time_index
        self.iteration = iteration
