"""Exception hierarchy used across the package.

Everything derives from :class:`KGCalibError` so callers can catch one type.
Fitted-state errors reuse ``sklearn.exceptions.NotFittedError`` rather than
defining a parallel class.
"""


class KGCalibError(Exception):
    """Base class for all package-specific errors."""


class ParseError(KGCalibError, ValueError):
    """A data file line could not be parsed.

    Carries ``path`` and ``line_no`` (1-based) when known so messages point at
    the offending input line.
    """

    def __init__(self, message, path=None, line_no=None):
        if path is not None and line_no is not None:
            message = f"{path}:{line_no}: {message}"
        super().__init__(message)
        self.path = path
        self.line_no = line_no


class VocabularyError(KGCalibError, KeyError):
    """An entity or relation label is absent from a frozen vocabulary."""


class ConfigError(KGCalibError, ValueError):
    """A configuration value is invalid or options are inconsistent."""


class SamplingError(KGCalibError, ValueError):
    """Corruption sampling is impossible, e.g. fewer than two candidate entities."""


class FitError(KGCalibError, ValueError):
    """A calibrator or threshold table cannot be fitted on the given sample."""


class ConvergenceError(FitError):
    """Newton iterations exhausted before the gradient tolerance was met.

    The last iterate is attached (``slope``, ``intercept``, ``n_iter``) so a
    caller may inspect or deliberately reuse it.
    """

    def __init__(self, message, slope=None, intercept=None, n_iter=None):
        super().__init__(message)
        self.slope = slope
        self.intercept = intercept
        self.n_iter = n_iter


class DivergenceError(KGCalibError, RuntimeError):
    """Training produced a non-finite loss value."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class StageError(KGCalibError, RuntimeError):
    """A pipeline stage failed; wraps the cause and names the stage."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
