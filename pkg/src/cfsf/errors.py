"""Exception hierarchy. CLI exit codes key off the two base classes."""


class CfsfError(Exception):
    """Base class for all library errors."""


class ValidationError(CfsfError):
    """Bad input or configuration (CLI exit code 1)."""


class NumericalError(CfsfError):
    """A solver or estimator could not produce a result (CLI exit code 2)."""


class InvalidInput(ValidationError, ValueError):
    pass


class DesignInvalid(ValidationError):
    pass


class RankDeficient(NumericalError):
    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class Separation(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class EmptyAfterTrim(NumericalError):
    pass
