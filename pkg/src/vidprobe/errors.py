"""Shared exception types (CLI maps these onto exit codes)."""


class ValidationError(ValueError):
    """Bad user input: config keys, argument ranges, degenerate specs."""


class FormatError(IOError):
    """Corrupt or mismatched on-disk artifact: checkpoint, dataset, raster."""
