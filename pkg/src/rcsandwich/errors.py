"""Exception hierarchy.

The CLI maps these onto exit codes: configuration problems exit 2, data and
design problems exit 3, numerical failures exit 4.
"""


class RCSandwichError(Exception):
    pass


class ConfigError(RCSandwichError, ValueError):
    pass


class DataError(RCSandwichError, ValueError):
    pass


class DomainError(DataError):
    """Argument outside the domain of an operation (negative weight, n < 2, ...)."""


class DesignError(DataError):
    pass


class LonelyPSUError(DesignError):
    def __init__(self, strata):
        self.strata = list(strata)
        super().__init__(f"strata with a single PSU: {self.strata[:10]}")


class NumericalError(RCSandwichError, ArithmeticError):
    pass


class SingularSystemError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, last_iterate=None, iterations=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


class DivergenceError(NumericalError):
    pass
