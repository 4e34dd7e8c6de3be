"""Exception hierarchy shared by every module."""


class StreamAnnError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(StreamAnnError, ValueError):
    """Caller violated a precondition (bad ids, mismatched dimensions, bad params)."""


class FormatError(StreamAnnError):
    """A vector or index file is malformed."""


class StorageError(StreamAnnError, OSError):
    """The storage layer failed or is inconsistent."""
