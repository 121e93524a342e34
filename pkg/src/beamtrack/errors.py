"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A configuration or parameter value violates its documented contract."""


class CalibrationError(RuntimeError):
    """Sensor calibration could not be performed (e.g. too few rest samples)."""


class IdentificationError(RuntimeError):
    """Client identification could not produce a binding this frame."""


class DatagramError(ValueError):
    """A telemetry datagram is malformed (wrong length or non-finite payload)."""
