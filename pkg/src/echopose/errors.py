"""Exception types shared across the package."""


class EchoPoseError(Exception):
    """Base class for all package errors."""


class ConfigurationError(EchoPoseError):
    """Invalid parameter set (chirp spec, scenario config, CLI config)."""


class ScenarioError(EchoPoseError):
    """Scenario violates its validity ranges (trajectory, clock, geometry)."""


class FramingError(EchoPoseError):
    """Sample buffers do not line up with the expected frame structure."""


class NoSignalError(EchoPoseError):
    """Correlation search found no chirp in the stream."""


class CalibrationError(EchoPoseError):
    """Calibration window unusable (motion, too short, inconsistent drift)."""


class StateError(EchoPoseError):
    """Operation requires session state that is not established yet."""


class FormatError(EchoPoseError):
    """Input file has the wrong sample rate, bit depth or channel count."""


class AlignmentError(EchoPoseError):
    """Prediction and ground-truth records share no usable time overlap."""
