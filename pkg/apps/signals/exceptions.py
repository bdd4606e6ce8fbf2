# apps/signals/exceptions.py
from apps.core.exceptions import MidtError


class SignalError(MidtError):
    """Invalid record, dataset or split"""


class InvalidRecordError(SignalError):
    pass


class OracleConfigError(SignalError):
    pass


class SplitError(SignalError):
    pass


class DatasetFormatError(SignalError):
    """Dataset file could not be decoded"""

    def __init__(self, message, path=None):
        self.path = str(path) if path is not None else None
        super().__init__(message, path=self.path)


class BadMagicError(DatasetFormatError):
    def __init__(self, found, path=None):
        self.found = found
        super().__init__(f'bad magic: expected MIDT, found {found!r}', path=path)


class MalformedHeaderError(DatasetFormatError):
    pass


class TruncatedPayloadError(DatasetFormatError):
    def __init__(self, expected, actual, path=None):
        self.expected = expected
        self.actual = actual
        super().__init__(
            f'truncated payload: expected {expected} bytes, found {actual}', path=path,
        )
