"""Exception types shared across modules."""


class ConfigError(ValueError):
    """Invalid model or experiment configuration."""


class OutOfBoxError(IndexError):
    """A site, ball or cube lies outside the finite box."""


class FormatError(ValueError):
    """Malformed environment file."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ParticleCapError(RuntimeError):
    """Population exceeded the configured particle cap."""

    def __init__(self, message: str, record=None):
        super().__init__(message)
        self.record = record


class CountOverflowError(OverflowError):
    """Exact particle counts would leave the supported integer range."""


class NoSurvivorsError(RuntimeError):
    """Conditioning on survival accepted zero replicas."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual
