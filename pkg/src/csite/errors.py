"""Exception hierarchy shared by the csite modules."""


class CsiteError(Exception):
    """Base class for every error raised by csite."""


class DimensionMismatch(CsiteError, ValueError):
    pass


class OddLength(CsiteError, ValueError):
    pass


class WindowTooSmall(CsiteError, ValueError):
    pass


class WindowNotFull(CsiteError, ValueError):
    pass


class NotCalibrated(CsiteError, RuntimeError):
    pass


class InvalidToken(CsiteError, ValueError):
    pass


class MalformedPayload(CsiteError, ValueError):
    pass


class ProtocolViolation(CsiteError, RuntimeError):
    pass


class InvalidConfig(CsiteError, ValueError):
    pass


class RateTooHigh(CsiteError, ValueError):
    pass


class EmptyTrace(CsiteError, ValueError):
    pass


class InvalidAxisValue(CsiteError, ValueError):
    pass


class CorruptHeader(CsiteError, IOError):
    """Trace file header (or body) is unreadable; no partial trace is returned."""
