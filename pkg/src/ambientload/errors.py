"""Exception hierarchy shared by every module of the package."""


class AmbientLoadError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(AmbientLoadError, ValueError):
    """An input object violates a documented invariant."""


class ParseError(ValidationError):
    """A case or measurement document could not be parsed."""


class DimensionMismatch(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class UnstableDrift(AmbientLoadError):
    """The drift matrix has an eigenvalue with nonnegative real part."""


class SingularInput(AmbientLoadError):
    """Matrix logarithm requested for a (numerically) singular matrix."""


class NegativeRealAxisEigenvalue(AmbientLoadError):
    """The principal matrix logarithm does not exist.

    For an estimated ``G C^-1`` this usually means the lag is too long for
    the fastest mode or the window is too short.
    """


class SingularCovariance(AmbientLoadError):
    pass


class InsufficientSamples(AmbientLoadError):
    pass


class ZeroVoltageSample(AmbientLoadError):
    pass


class NumericalBreakdown(AmbientLoadError):
    pass


class NonConvergence(AmbientLoadError):
    def __init__(self, message, mismatch=None, iterations=None):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


class LowVoltage(AmbientLoadError):
    pass


class InstabilityDetected(AmbientLoadError):
    pass
