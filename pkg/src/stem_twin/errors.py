"""Exception hierarchy shared by all stem_twin modules.

The CLI maps any ``StemTwinError`` to exit code 1 and prints its message.
"""


class StemTwinError(Exception):
    """Base class for domain errors."""


class SingularPointError(StemTwinError, ValueError):
    """Observation point lies on a current filament."""


class OutOfRangeError(StemTwinError, ValueError):
    pass


class InfeasibleDesignError(StemTwinError, ValueError):
    pass


class EmptyFeasibleSetError(StemTwinError, ValueError):
    pass


class ZeroTurnsError(StemTwinError, ValueError):
    pass


class InstabilityError(StemTwinError, RuntimeError):
    """Simulated displacement left the model's validity range."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NoCrossingError(StemTwinError, ValueError):
    pass


class CalibrationError(StemTwinError, RuntimeError):
    """Least-squares calibration did not converge.

    ``params`` and ``report`` hold the best-so-far result.
    """

    def __init__(self, message, params=None, report=None):
        super().__init__(message)
        self.params = params
        self.report = report


class PreconditionError(StemTwinError, ValueError):
    pass


class FrameError(StemTwinError, ValueError):
    pass


class CrcMismatchError(FrameError):
    pass


class TruncatedFrameError(FrameError):
    pass


class BadCountError(FrameError):
    pass


class MalformedLineError(StemTwinError, ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno
