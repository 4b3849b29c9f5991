"""Exception hierarchy shared across the package."""


class CellwatchError(Exception):
    """Base class for all package errors."""


class FormatError(CellwatchError):
    """A telemetry file does not follow the expected layout."""


class SequencingError(CellwatchError):
    """Timestamps are not strictly increasing at the sample interval."""


class RowError(CellwatchError):
    """A data row has the wrong number of fields or an invalid value."""


class EmptyDatasetError(CellwatchError):
    """A dataset contains no frames."""


class ValidationError(CellwatchError):
    """A value violates a domain invariant."""


class DegenerateGroupError(ValidationError):
    """Fewer than two cells in a group."""


class DegenerateTrainingError(CellwatchError):
    """Training data has zero variance or is otherwise unusable."""


class DegenerateCalibrationError(DegenerateTrainingError):
    """CUSUM calibration sequence has zero variance."""


class InsufficientTrainingError(CellwatchError):
    """Not enough training samples for the requested model."""


class UsageError(CellwatchError):
    """An API was called with mismatched or inconsistent arguments."""


class NumericError(CellwatchError):
    """A non-finite value reached a numeric routine."""


class SimulationError(CellwatchError):
    """A simulated cell left its valid state of charge range."""


class IdentifiabilityError(CellwatchError):
    """Parameter estimation is ill-posed for the supplied data."""


class SchemaError(CellwatchError):
    """A serialized artifact has an unknown or incompatible schema."""
