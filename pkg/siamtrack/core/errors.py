"""
Error Hierarchy
Every error carries the exit code the CLI reports for it
"""
from pathlib import Path
from typing import Optional, Union


class SiamTrackError(Exception):
    """Base class for all expected failures"""

    exit_code = 1


class ConfigError(SiamTrackError):
    """Invalid or unsupported configuration"""

    exit_code = 2


class DataError(SiamTrackError):
    """Missing or malformed input data"""

    exit_code = 3


class ParseError(DataError):
    """Malformed file content, located by row or byte offset"""

    def __init__(
        self,
        message: str,
        path: Union[str, Path, None] = None,
        row: Optional[int] = None,
        offset: Optional[int] = None,
    ):
        self.path = str(path) if path is not None else None
        self.row = row
        self.offset = offset
        location = []
        if self.path:
            location.append(self.path)
        if row is not None:
            location.append(f"row {row}")
        if offset is not None:
            location.append(f"offset {offset}")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")


class EmptyCloudError(DataError):
    """An operation needed at least one point and got none"""

    def __init__(self, message: str = "no support points"):
        super().__init__(message)


class NumericError(SiamTrackError):
    """NaN/Inf values or a failed gradient check"""

    exit_code = 4


class ShapeMismatchError(NumericError, ValueError):
    """Array shapes do not line up"""


class TrackingError(SiamTrackError):
    """The tracker could not be initialized"""

    exit_code = 5
