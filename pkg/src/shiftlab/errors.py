"""Exception hierarchy for shiftlab.

Every failure that callers are meant to handle raises a subclass of
ShiftLabError with a message naming the offending piece of input
(layer index, field name, file offset, ...).
"""


class ShiftLabError(Exception):
    """Base class for all shiftlab errors."""


class DimensionMismatchError(ShiftLabError):
    """Array shapes do not chain (names the layer or operand at fault)."""


class StaleCacheError(ShiftLabError):
    """A backward pass was handed a cache from a different forward call."""


class NotADistributionError(ShiftLabError):
    """A row expected to be a probability distribution is not one."""


class LabelRangeError(ShiftLabError):
    """A class label falls outside [0, num_classes)."""


class EmptyBatchError(ShiftLabError):
    """An operation that needs at least one row received none."""


class NumericalError(ShiftLabError):
    """A public operation produced a non-finite value."""


class SchemeDataError(ShiftLabError):
    """The training scheme is incompatible with the available pools."""


class SelectionError(ShiftLabError):
    """A sampling strategy received an invalid pool or budget."""


class IdxFormatError(ShiftLabError):
    """Base class for IDX file parsing failures."""


class IdxMagicError(IdxFormatError):
    """IDX file magic number is wrong for the expected record type."""


class IdxTruncatedError(IdxFormatError):
    """IDX payload is shorter than its header promises."""


class IdxCountError(IdxFormatError):
    """Image and label files disagree on the number of records."""


class ConfigError(ShiftLabError):
    """A run or grid configuration failed validation."""


class AggregationError(ShiftLabError):
    """Run logs being aggregated are mutually incompatible."""
