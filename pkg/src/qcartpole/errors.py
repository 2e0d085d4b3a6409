"""Exception hierarchy shared across the package."""


class QCartpoleError(Exception):
    """Base class for all package errors."""


class ConfigurationError(QCartpoleError):
    """Invalid grid, parameters, noise model, or CLI/config input."""


class CalibrationError(QCartpoleError):
    """Noise calibration could not retain enough samples."""


class EstimatorFault(QCartpoleError):
    """Degenerate filter configuration (singular innovation covariance)."""


class GainFault(QCartpoleError):
    """Riccati recursion failed to converge."""


class BackactionError(QCartpoleError):
    """Measurement back-action annihilated the state (sampler mismatch)."""


class ProtocolError(QCartpoleError):
    """Malformed or out-of-order message on an agent session."""
