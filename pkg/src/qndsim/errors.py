class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class FitError(RuntimeError):
    """A least-squares problem is singular or otherwise unsolvable."""


class ConfigError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


class NumericError(RuntimeError):
    pass


class SamplingError(RuntimeError):
    pass


class ArtifactError(RuntimeError):
    """Missing, malformed or stale pipeline artifact."""
