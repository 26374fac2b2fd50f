"""
Error hierarchy shared by every component of the simulator.
"""


class DoCoFLError(Exception):
    """Base class for simulator errors"""


class ConfigError(DoCoFLError, ValueError):
    """Invalid experiment configuration"""

    def __init__(self, message, line=None, field=None):
        self.reason = message
        self.line = line
        self.field = field
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field '{field}'")
        if location:
            message = f"{', '.join(location)}: {message}"
        super().__init__(message)


class CodecError(DoCoFLError, ValueError):
    """Invalid codec input or corrupted bitstream"""


class UndefinedMetricError(DoCoFLError, ZeroDivisionError):
    """Metric is undefined for the given reference (e.g. zero-norm NMSE)"""


class ProtocolViolation(DoCoFLError, RuntimeError):
    """Server/client state machine used out of order"""


class NumericBlowup(DoCoFLError, FloatingPointError):
    """Non-finite model weights"""

    def __init__(self, message, last_good_round=None):
        self.last_good_round = last_good_round
        super().__init__(message)
