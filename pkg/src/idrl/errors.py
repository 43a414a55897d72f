"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Shapes or settings that cannot be wired together."""


class SchemaError(ValueError):
    """A dataset file is missing a required column."""


class ParseError(ValueError):
    """A dataset cell could not be parsed as a number."""


class UnsupportedMetricError(ValueError):
    """The data lacks what a metric needs (ground truth, randomized subset, ...)."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""
