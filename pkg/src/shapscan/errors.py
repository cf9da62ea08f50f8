"""Exception types shared across shapscan modules."""


class ShapscanError(Exception):
    """Base class for all shapscan errors."""


class DimensionError(ShapscanError, ValueError):
    """Inputs disagree on length, shape, or declared arity."""


class ParameterError(ShapscanError, ValueError):
    """A parameter is outside its documented range or malformed."""


class CapacityError(ShapscanError, RuntimeError):
    """A requested computation exceeds a hard size or evaluation budget."""


class PredictorError(ShapscanError, RuntimeError):
    """A model evaluation failed or returned unusable output."""


class ProtocolError(PredictorError):
    """An external model subprocess violated the line protocol."""


class ImageFormatError(ShapscanError, ValueError):
    """An image file is unreadable or not a supported grayscale format."""


class NotFoundError(ShapscanError, KeyError):
    """A referenced record (scan, detection, explanation) does not exist."""


class StateConflictError(ShapscanError, RuntimeError):
    """An operation is not allowed in the record's current state."""
