"""Exception types raised by cf_parity.

All of them subclass ``ValueError`` so callers that already guard against bad
inputs with ``except ValueError`` keep working.
"""


class CfParityError(ValueError):
    """Base class for every error raised on purpose by this package."""


class InputError(CfParityError):
    """An argument is outside the domain of the operation."""


class ModelError(CfParityError):
    """Model parameters or graph structure violate an invariant."""


class FitError(CfParityError):
    """A repair model or regression could not be fitted."""

    def __init__(self, message, columns=None):
        super().__init__(message)
        self.columns = list(columns or [])


class SchemaError(CfParityError):
    """A tabular input is missing a required column."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class RowError(CfParityError):
    """A tabular input holds a value that cannot be parsed."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class ExperimentError(CfParityError):
    """The experiment cannot run on the data it was given."""

    def __init__(self, message, counts=None):
        super().__init__(message)
        self.counts = dict(counts or {})
