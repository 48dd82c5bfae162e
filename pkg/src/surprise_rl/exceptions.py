"""Exception hierarchy shared by every module."""


class SurpriseRLError(Exception):
    """Base class for all package errors."""


class ContractViolation(SurpriseRLError):
    """An operation was called outside its precondition (e.g. stepping a finished episode)."""


class GeneratorDefectError(SurpriseRLError):
    """The level generator failed to produce a valid level within its attempt budget."""


class InsufficientDataError(SurpriseRLError):
    """Not enough observations to fit a density model."""


class NonFiniteError(SurpriseRLError, FloatingPointError):
    """A NaN or inf appeared in a forward pass, loss, or gradient."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class StaleTapeError(SurpriseRLError):
    """A gradient tape was used with parameters other than the ones that produced it."""


class ConfigError(SurpriseRLError, ValueError):
    """Invalid experiment configuration."""


class ExperimentFailure(SurpriseRLError):
    """A module error aborted a training run; carries the failing update index."""

    def __init__(self, update, cause):
        super().__init__(f"experiment failed at update {update}: {cause!r}")
        self.update = update
        self.cause = cause
