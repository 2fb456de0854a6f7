"""Exception types shared across the toolkit."""


class SensorStyleError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(SensorStyleError, ValueError):
    """An argument violates an operation's preconditions."""


class ImageDecodeError(SensorStyleError):
    """Byte stream is not a decodable PNG/JPEG image."""


class ExtractorFormatError(SensorStyleError):
    """A feature-extractor weight file violates the STYLEFX1 format."""


class ProfileError(SensorStyleError):
    """A sensor profile failed schema or invariant validation."""


class DatasetError(SensorStyleError):
    """A dataset directory cannot be scanned or used."""


class EmptyDatasetError(DatasetError):
    """A dataset scan produced zero usable images."""
