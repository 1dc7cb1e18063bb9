"""Exception hierarchy shared across the package."""


class StackingError(Exception):
    """Base class for all errors raised by stackdesign."""


class FactorizationFailure(StackingError):
    """A kernel matrix could not be factorized within the jitter ceiling."""


class BudgetInfeasible(StackingError):
    """The emulation bound cannot reach its target within the point cap."""


class MaxLevelsExceeded(StackingError):
    """The stopping rule did not fire before the maximum fidelity level."""


class SimulatorError(StackingError):
    """Base class for simulator failures."""


class ProtocolError(SimulatorError):
    """A subprocess simulator produced a malformed response line."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class SimulatorCrash(SimulatorError):
    """A subprocess simulator died and could not be restarted."""


class SimulatorTimeout(SimulatorError):
    """A subprocess simulator did not answer in time."""
