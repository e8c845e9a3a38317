"""Exception types shared across the package."""


class NeuralCTError(Exception):
    """Base class for all package errors."""


class ConfigError(NeuralCTError, ValueError):
    """Invalid configuration, geometry or input shape."""


class NumericalError(NeuralCTError, RuntimeError):
    """A numerical stage failed (NaN loss, degenerate fit, ...).

    ``stage`` names the pipeline stage that failed so front-ends can report it.
    """

    def __init__(self, message, stage=None, checkpoint=None):
        super().__init__(message)
        self.stage = stage
        self.checkpoint = checkpoint
