"""Shared exception types."""


class AgchanError(Exception):
    """Base class for package errors."""


class RasterParseError(AgchanError):
    """Malformed raster file; carries the byte offset where parsing failed."""

    def __init__(self, message, byte_offset=None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class RasterValidationError(AgchanError):
    """Structurally valid file with out-of-contract values."""


class OutOfDomainError(AgchanError):
    """Query point outside the grid or segment outside the ROI."""


class NodataError(AgchanError):
    """All source cells needed for a query are nodata."""


class CoverageError(AgchanError):
    """A traced path crosses a gap in raster coverage."""


class MetricError(AgchanError):
    """Undefined metric (zero variance, length mismatch)."""
