"""Exception hierarchy for nonovershoot."""


class NonovershootError(Exception):
    """Base class for all errors raised by this package."""


class NumericsError(NonovershootError, ArithmeticError):
    """A dense linear-algebra routine could not produce a valid answer."""


class DilationError(NonovershootError, ValueError):
    """A generator/weight pair does not define a strictly monotone dilation."""


class ConeError(NonovershootError, ValueError):
    """Malformed cone specification (zero rows, singular square H, ...)."""


class PlantError(NonovershootError, ValueError):
    """Plant data is inconsistent or the pair (A, B) is not controllable."""


class SynthesisError(NonovershootError):
    """A design stage is infeasible.

    Attributes
    ----------
    stage : str
        Name of the pipeline stage that failed.
    detail : object
        Best iterate, offending entries or any other diagnostic payload.
    """

    def __init__(self, message, stage=None, detail=None):
        super().__init__(message)
        self.stage = stage
        self.detail = detail


class IntegrationError(NonovershootError):
    """The ODE integrator could not continue (step underflow, NaN, ...)."""

    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


class ConfigError(NonovershootError, ValueError):
    """A problem configuration or controller artifact is malformed."""
