class ThinDeepError(Exception):
    """Base class for errors raised by this package."""


class ParameterError(ThinDeepError, ValueError):
    """A parameter lies outside its domain (non-PD matrix, negative variance...)."""


class NumericalError(ThinDeepError, ArithmeticError):
    """A factorisation or solve failed even after jitter."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DataError(ThinDeepError, ValueError):
    """Malformed input data (parse failure, NaN, constant column...)."""


class TrainingError(ThinDeepError, RuntimeError):
    """Optimisation hit a non-finite loss or gradient."""

    def __init__(self, message, last_good=None, epoch=None):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch
