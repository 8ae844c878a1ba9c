"""Exception hierarchy and CLI exit codes"""
from typing import Optional


class BayesIrError(Exception):
    """Base class for every error raised by this project"""
    exit_code = 1


class InvalidArgumentError(BayesIrError, ValueError):
    exit_code = 2


class DimensionMismatchError(InvalidArgumentError):
    pass


class NumericalError(BayesIrError, ArithmeticError):
    exit_code = 3


class PlanCoverageError(BayesIrError, RuntimeError):
    """A window plan left a time index uncovered (internal invariant)"""
    exit_code = 3


class ConfigError(BayesIrError):
    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class StorageError(BayesIrError, OSError):
    exit_code = 4

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{message} [{path}]" if path else message)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, BayesIrError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return StorageError.exit_code
    return 1
