"""Exception hierarchy shared by all modules."""


class RicciS2Error(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(RicciS2Error, ValueError):
    """Invalid grid size, tolerance, spectrum count or run configuration."""


class DomainError(RicciS2Error, ValueError):
    """Input outside the domain of an operation (degenerate metric, u <= 0, ...)."""


class UsageError(RicciS2Error, ValueError):
    """Inconsistent arguments, e.g. fields living on different grids."""


class ContractError(RicciS2Error, ValueError):
    """A documented precondition does not hold (constraint, criticality)."""


class SolverError(RicciS2Error, RuntimeError):
    """An iterative solver failed to converge.

    The best iterate found so far is attached as ``best`` when available.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class StepperError(SolverError):
    """Time stepper rejected steps below its step-size floor."""


class FlowError(SolverError):
    """A flow run aborted; ``best`` carries the partial trajectory."""


class TransferError(RicciS2Error, RuntimeError):
    """Gauge transfer produced a non-monotone reparametrization."""


class FitError(RicciS2Error, ValueError):
    """Not enough usable points for a least-squares fit."""


class DataQualityError(RicciS2Error, ValueError):
    """Input series violates an assumption of the fit (e.g. non-monotone gap)."""
