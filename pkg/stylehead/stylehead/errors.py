'''
The exceptions raised by stylehead.

Every documented failure of an operation is one of these. The command line front end
maps DatasetIOError to exit code 2 and the rest to exit code 1.
'''
from __future__ import annotations

from typing import Optional


class StyleHeadError(Exception):
    pass


class InvalidArgumentError(StyleHeadError, ValueError):
    pass


class SingularWarpError(InvalidArgumentError):
    '''
    the keypoint correspondences do not determine a thin-plate spline
    (duplicated or collinear source keypoints).
    '''
    pass


class EmptyMapError(InvalidArgumentError):
    pass


class DegenerateRegionError(InvalidArgumentError):
    pass


class PreconditionError(StyleHeadError):
    pass


class DatasetValidationError(StyleHeadError):
    pass


class DatasetIOError(StyleHeadError, OSError):
    '''
    a file could not be read or written; path names the file.
    '''
    def __init__(self, message: str, path: Optional[str] = None):
        if path is not None and str(path) not in message:
            message = "{}: {}".format(message, path)
        super().__init__(message)
        self.path = None if path is None else str(path)
