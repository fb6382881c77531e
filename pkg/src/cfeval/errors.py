"""Exception types shared across the package.

The CLI maps UsageError to exit code 1 and DataError (and subclasses) to
exit code 2; everything else is a bug and propagates.
"""


class UsageError(Exception):
    """Bad command line or configuration."""


class DataError(Exception):
    """Input data violates a contract (schema, coverage, format...)."""


class SchemaError(DataError):
    """Event-log schema is missing or names a nonexistent column."""


class RowError(DataError):
    """One or more event-log rows failed to parse."""

    def __init__(self, message, bad_rows=None):
        super().__init__(message)
        self.bad_rows = bad_rows or []


class SplitError(DataError):
    """Too little data to split."""


class FitError(DataError):
    """Encoder or model fitting received unusable data."""


class CoverageError(DataError):
    """A treatment level is missing (or too sparse) in the training data."""


class ShapeError(Exception):
    """Tensor shapes incompatible for the requested operation."""


class TrainingError(Exception):
    """Optimization diverged (NaN loss) or hit an internal contract."""


class DegenerateInputError(DataError):
    """Statistical test input carries no usable variation."""


class BundleFormatError(DataError):
    """Persisted model bundle is corrupt or has the wrong version."""
