"""Exception types raised by the solvers and the harness."""


class KSWaveError(Exception):
    """Base class for all package errors."""


class ParameterError(KSWaveError, ValueError):
    pass


class ShootingError(KSWaveError):
    """The shooting trajectory left the invariant box or never reached the center event."""


class StiffnessError(ShootingError):
    """The step controller underflowed the minimum step."""


class CurlError(KSWaveError, ValueError):
    """A vector field that must be a gradient carries a discrete curl above threshold."""


class GridMismatchError(KSWaveError, ValueError):
    pass


class BlowUpError(KSWaveError):
    """A time stepper produced non-finite values or exceeded the sup-norm tripwire."""

    def __init__(self, message, step=None, t=None):
        super().__init__(message)
        self.step = step
        self.t = t


class CFLError(KSWaveError):
    pass


class PositivityError(BlowUpError):
    """The cell density went below the negativity tolerance."""


class ConfigError(KSWaveError, ValueError):
    pass


class FormatError(KSWaveError, ValueError):
    """A file on disk does not match the expected layout."""
