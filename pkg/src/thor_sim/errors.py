"""Exception hierarchy shared by the simulator, attack and harness."""


class ThorSimError(Exception):
    """Base class for all errors raised by thor_sim."""


class ConfigurationError(ThorSimError, ValueError):
    """A configuration value is missing, malformed or violates an invariant."""


class PatternError(ThorSimError, ValueError):
    """A tile pattern does not have the required 64-element shape."""


class CalibrationError(ThorSimError):
    """A calibration step could not produce a usable value."""


class UndefinedOverheadError(ThorSimError, ZeroDivisionError):
    """Power overhead requested against a zero-energy baseline."""
