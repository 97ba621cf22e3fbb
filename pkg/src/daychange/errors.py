"""Exception hierarchy shared across the package."""


class DayChangeError(Exception):
    """Base class for all library errors."""


class NotPositiveDefiniteError(DayChangeError):
    """A covariance matrix failed its symmetric factorization.

    Carries the smallest eigenvalue of the offending matrix when it has
    been computed, so callers can report how degenerate the input was.
    """

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class InsufficientDataError(DayChangeError):
    """Too few days to form the requested estimate."""


class DegenerateFeatureError(DayChangeError):
    """A feature has zero sample variance where a positive one is required."""

    def __init__(self, message, feature=None):
        super().__init__(message)
        self.feature = feature


class WindowError(DayChangeError):
    """The candidate-day search window is empty or violates its floor."""


class SingularInformationError(DayChangeError):
    """The information matrix cannot be inverted."""


class SplitError(DayChangeError):
    """A pre/post split leaves fewer than two days on one side."""


class CalibrationError(DayChangeError):
    """Effect-size calibration could not bracket or settle on the target."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class NullBuildError(DayChangeError):
    """A detector failed while scoring a null replicate.

    Carries the replicate index and seed material needed to reproduce the
    failing replicate in isolation.
    """

    def __init__(self, message, replicate=None, seed_key=None):
        super().__init__(message)
        self.replicate = replicate
        self.seed_key = seed_key


class IngestError(DayChangeError):
    """An input file violates the ingest contract (carries row/column context)."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class UndefinedCorrelationError(DayChangeError):
    """Rank correlation is undefined because one input has zero rank variance."""


class ConfigError(DayChangeError):
    """A configuration file or option set is invalid."""
