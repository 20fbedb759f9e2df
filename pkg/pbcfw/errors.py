"""Exceptions raised by the solver, the problems and the analysis tools."""


class PbcfwError(Exception):
    pass


class InvalidConfigError(PbcfwError, ValueError):
    """Arguments that can never describe a valid run or problem."""


class FeasibilityError(PbcfwError, ValueError):
    """A point left its block domain by more than the allowed tolerance."""


class ContractViolation(PbcfwError, ValueError):
    """A caller broke a precondition, e.g. repeated blocks in a batch."""


class NumericalError(PbcfwError, ArithmeticError):
    pass


class CapacityError(PbcfwError, RuntimeError):
    """An exact computation would exceed the configured enumeration caps."""


class SolverAborted(PbcfwError, RuntimeError):
    """A run stopped on an error. `result` holds the trace up to the failure."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
