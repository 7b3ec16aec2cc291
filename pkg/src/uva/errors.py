"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    pass


class TrainingDivergenceError(RuntimeError):
    """A loss term or gradient became non-finite during training."""

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class CheckpointCorruptError(IOError):
    pass


class UnsupportedVersionError(IOError):
    pass
