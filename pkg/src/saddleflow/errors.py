"""Exception hierarchy shared by all saddleflow modules."""
from __future__ import annotations


class SaddleflowError(Exception):
    """Base class; ``exit_code`` is used by the command line harness."""

    exit_code = 3


class ModelError(SaddleflowError, ValueError):
    """A model definition violates the structural requirements."""

    exit_code = 2


class ConfigError(SaddleflowError, ValueError):
    exit_code = 2


class IntegrationError(SaddleflowError):
    pass


class StepSizeUnderflow(IntegrationError):
    pass


class Escaped(IntegrationError):
    def __init__(self, bound: float, t_exit: float, reason: str = "left neighbourhood"):
        super().__init__(f"{reason}: bound {bound:g} exceeded at t={t_exit:.6g}")
        self.bound = bound
        self.t_exit = t_exit
        self.reason = reason


class NoCrossing(IntegrationError):
    def __init__(self, t_max: float):
        super().__init__(f"no section crossing before t_max={t_max:g}")
        self.t_max = t_max


class TangentialCrossing(IntegrationError):
    pass


class ChartSingular(SaddleflowError):
    pass


class NewtonDiverged(SaddleflowError):
    pass


class NotContracting(SaddleflowError):
    def __init__(self, ratio: float):
        super().__init__(f"integral operator is not contracting (ratio {ratio:.3g})")
        self.ratio = ratio


class MaxIterExceeded(SaddleflowError):
    pass


class DegenerateJacobian(SaddleflowError):
    pass


class NoOrbit(SaddleflowError):
    pass


class ClosureFailure(SaddleflowError):
    pass


class LeftDomain(SaddleflowError):
    pass
