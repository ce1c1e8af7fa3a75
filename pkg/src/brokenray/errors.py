"""Exception types shared across the package."""


class BrokenRayError(Exception):
    """Base class for all package errors."""


class ConfigError(BrokenRayError):
    """Bad configuration file or inconsistent parameter block.

    Carries ``line`` when the underlying parser reported one.
    """

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class EvaluationError(BrokenRayError):
    """A model evaluation produced NaN/inf or was called off its domain."""


class ZeroVectorError(EvaluationError):
    """Direction-dependent quantity requested at v = 0."""


class ConvexityError(BrokenRayError):
    """Positive-definiteness of the fundamental tensor failed.

    Attributes x, v hold a witness sample.
    """

    def __init__(self, message, x=None, v=None):
        super().__init__(message)
        self.x = x
        self.v = v


class IntegrationError(BrokenRayError):
    """Geodesic integration failed; ``partial`` holds the path so far."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NewtonError(BrokenRayError):
    """Newton solve did not reach the requested residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DistanceError(BrokenRayError):
    """No connecting geodesic found within budget.

    ``best_miss`` and ``best_time`` describe the closest candidate.
    """

    def __init__(self, message, best_miss=None, best_time=None):
        super().__init__(message)
        self.best_miss = best_miss
        self.best_time = best_time


class CoverageError(BrokenRayError):
    """A relation query found no admissible candidates.

    ``diagnostics`` is a dict with counts of what was scanned.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class BudgetError(BrokenRayError):
    """A resolution or memory budget would be exceeded."""
