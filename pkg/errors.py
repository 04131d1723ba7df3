"""Exception types shared across the simulator."""


class QKDSimError(Exception):
    """Base class for all simulator failures."""

    exit_code = 1
    kind = "error"


class ConfigError(QKDSimError, ValueError):
    """Scenario or parameter validation failed."""

    exit_code = 2
    kind = "validation"


class CalibrationError(QKDSimError):
    """Line-length scan or visibility measurement could not complete."""

    exit_code = 3
    kind = "calibration"


class SecurityAbort(QKDSimError):
    """Key exchange stopped by a security monitor or the QBER threshold."""

    exit_code = 4
    kind = "security"


class ProtocolError(QKDSimError):
    """A classical message arrived in a phase where it is not legal."""

    kind = "protocol"


class DecodeError(QKDSimError):
    """Malformed classical frame."""

    kind = "decode"


class BadMagicError(DecodeError):
    pass


class UnsupportedVersionError(DecodeError):
    pass


class UnknownTypeError(DecodeError):
    pass


class TruncatedFrameError(DecodeError):
    pass


class PayloadError(DecodeError):
    """Frame header is fine but the payload does not parse for its type."""
