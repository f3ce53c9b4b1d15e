"""Exception hierarchy shared across the package."""


class RCError(Exception):
    """Base class for all errors raised by rc_rmle."""


class ConfigurationError(RCError, ValueError):
    """Invalid user-supplied parameter. ``field`` names the offending input."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DegenerateObservationError(RCError, ValueError):
    """An observation whose regressor vector has zero norm."""


class EmptyOperatorError(RCError):
    """No observation line intersects the estimation grid."""


class DataError(RCError):
    """Input data could not be read or contained no usable rows."""
