"""Exception hierarchy shared by all modules."""


class EtreeError(Exception):
    """Base class for errors raised by this package."""


class ContractError(EtreeError, ValueError):
    """A caller broke a documented precondition (shapes, ranges, sizes)."""


class DataError(EtreeError, ValueError):
    """Input data could not be parsed or is inconsistent."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(EtreeError, ArithmeticError):
    """A computation produced non-finite values."""


class FactorizationError(NumericError):
    """Cholesky factorization hit a non-positive pivot."""

    def __init__(self, pivot, value=None, row=None):
        msg = f"matrix is not positive definite at pivot {pivot}"
        if value is not None:
            msg += f" (value {value!r})"
        if row is not None:
            msg += f" in row subproblem {row}"
        super().__init__(msg)
        self.pivot = pivot
        self.value = value
        self.row = row


class DivergenceError(NumericError):
    """The outer solver produced a non-finite objective."""

    def __init__(self, epoch, value):
        super().__init__(f"objective became non-finite ({value!r}) at epoch {epoch}")
        self.epoch = epoch
