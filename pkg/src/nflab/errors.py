"""Exception hierarchy shared by every nflab module."""


class NflabError(Exception):
    """Base class for all errors raised by nflab."""


class InvariantViolation(NflabError, ValueError):
    """A field or state failed one of its structural invariants."""


class ZeroDirector(NflabError, ValueError):
    """A director field is (nearly) zero somewhere and cannot be normalized."""


class UnknownPreset(NflabError, KeyError):
    pass


class NegativeTime(NflabError, ValueError):
    pass


class BlowUpDetected(NflabError, RuntimeError):
    """Raised when a run produces non-finite values or exceeds the overflow guard.

    The offending simulation time is attached as ``time``; ``trajectory`` holds
    whatever was recorded before the failure, when available.
    """

    def __init__(self, message, time=None, trajectory=None):
        super().__init__(message)
        self.time = time
        self.trajectory = trajectory


class InsufficientSaves(NflabError, ValueError):
    pass


class RadiusTooLarge(NflabError, ValueError):
    pass


class CylinderOutsideData(NflabError, ValueError):
    pass


class PhiNegative(NflabError, ValueError):
    pass


class PhiNotSupported(NflabError, ValueError):
    pass


class PhiOutOfRange(NflabError, ValueError):
    pass


class GridTooLarge(NflabError, ValueError):
    pass


class InsufficientTimeSpan(NflabError, ValueError):
    pass


class IncompatibleLambda(NflabError, ValueError):
    pass


class ConfigInvalid(NflabError, ValueError):
    """Configuration failed validation; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class UnknownDiagnostic(NflabError, KeyError):
    pass


class FileCorrupt(NflabError, ValueError):
    pass
